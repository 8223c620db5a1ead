#pragma once

#include "holobyte/bench.hpp"
#include "holobyte/checkpoint.hpp"
#include "holobyte/errors.hpp"
#include "holobyte/holocodec.hpp"
#include "holobyte/manifold.hpp"
#include "holobyte/model.hpp"
#include "holobyte/rotor.hpp"
#include "holobyte/trainer.hpp"
