// holobyte: train, evaluate, sample, and run the capacity / attention-memory
// experiments from the command line.
//
// Exit codes: 0 success, 1 usage or invalid argument, 2 I/O or unusable file
// (missing, corrupt, config mismatch), 3 numerical fault.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "holobyte/holobyte.hpp"

namespace fs = std::filesystem;
using namespace holobyte;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kNumeric = 3 };

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::Checksum:
    case ErrorKind::ConfigMismatch:
      return kIo;
    case ErrorKind::NumericalFault:
      return kNumeric;
    default:
      return kUsage;
  }
}

/// Output sink: the named file, or stdout when the path is empty or "-".
class Sink {
 public:
  explicit Sink(const std::string& path, bool binary = false) {
    if (path.empty() || path == "-") return;
    file_.open(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    require(static_cast<bool>(file_), ErrorKind::Io, "cannot open '" + path + "' for writing");
    path_ = path;
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }
  void finish() {
    stream().flush();
    require(static_cast<bool>(stream()), ErrorKind::Io, "write failed for '" + (path_.empty() ? "stdout" : path_) + "'");
  }

 private:
  std::ofstream file_;
  std::string path_;
};

/// Replaces every byte that is not part of a well-formed UTF-8 sequence with
/// U+FFFD. Display only; raw output never goes through this.
std::string lossy_utf8(const std::vector<std::uint8_t>& in) {
  static const char kReplacement[] = "\xEF\xBF\xBD";
  std::string out;
  std::size_t i = 0;
  while (i < in.size()) {
    const std::uint8_t c = in[i];
    std::size_t len = 0;
    std::uint32_t lo = 0x80, hi = 0xBF;  // allowed range of the second byte
    if (c < 0x80) len = 1;
    else if (c >= 0xC2 && c <= 0xDF) len = 2;
    else if (c >= 0xE0 && c <= 0xEF) {
      len = 3;
      if (c == 0xE0) lo = 0xA0;
      if (c == 0xED) hi = 0x9F;
    } else if (c >= 0xF0 && c <= 0xF4) {
      len = 4;
      if (c == 0xF0) lo = 0x90;
      if (c == 0xF4) hi = 0x8F;
    }
    bool ok = len > 0 && i + len <= in.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const std::uint8_t b = in[i + k];
      ok = k == 1 ? (b >= lo && b <= hi) : (b >= 0x80 && b <= 0xBF);
    }
    if (ok) {
      out.append(reinterpret_cast<const char*>(in.data() + i), len);
      i += len;
    } else {
      out += kReplacement;
      ++i;
    }
  }
  return out;
}

std::unique_ptr<HoloByteModel<float>> model_from_checkpoint(const std::string& path, std::uint64_t* step = nullptr) {
  const auto header = read_checkpoint_header(path);
  auto model = std::make_unique<HoloByteModel<float>>(header.config, 0);
  nn::OptimizerState<float> opt;
  const auto s = load_checkpoint(path, *model, opt);
  if (step) *step = s;
  return model;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
};

int run_train(const TrainArgs& a) {
  const TrainConfig cfg = load_train_config(a.config, a.overrides);
  cfg.validate();
  require(!cfg.train_corpus.empty(), ErrorKind::InvalidArgument, "config must set train_corpus");
  auto corpus = read_corpus(cfg.train_corpus);
  std::vector<std::uint8_t> train_bytes, val_bytes;
  if (cfg.val_corpus.empty()) {
    std::tie(train_bytes, val_bytes) = split_corpus(corpus);
  } else {
    train_bytes = std::move(corpus);
    val_bytes = read_corpus(cfg.val_corpus);
  }
  HoloByteModel<float> model(cfg.model, cfg.seed);
  std::fprintf(stderr, "holobyte train: %zu parameters, %zu train bytes, %zu val bytes\n",
               model.parameters().scalar_count(), train_bytes.size(), val_bytes.size());
  std::fprintf(stderr, "%s\n", kMetricHeader);
  const auto result = train(cfg, model, train_bytes, val_bytes,
                            [](const MetricRow& r) { std::fprintf(stderr, "%s\n", format_metric_row(r).c_str()); });
  const auto& f = result.final_row;
  std::printf("final step=%zu train_ce=%.6f val_ce=%.6f val_total=%.6f nats_per_byte=%.6f\n", f.step, f.train_ce,
              f.val_ce, f.val_total, f.nats_per_byte);
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, corpus;
  std::size_t seq_chunks = 0, batch = 4, max_batches = 0;
};

int run_eval(const EvalArgs& a) {
  auto model = model_from_checkpoint(a.checkpoint);
  const auto corpus = read_corpus(a.corpus);
  const std::size_t W = model->config().chunk;
  std::size_t T = a.seq_chunks ? a.seq_chunks : model->config().max_chunks;
  const std::size_t available = corpus.size() / W;
  require(available >= 2, ErrorKind::InvalidArgument,
          "corpus '" + a.corpus + "' holds fewer than two chunks of " + std::to_string(W) + " bytes");
  if (!a.seq_chunks) T = std::min(T, available - 1);
  require(T <= model->config().max_chunks, ErrorKind::InvalidArgument,
          "--seq-chunks exceeds the model's max_chunks " + std::to_string(model->config().max_chunks));
  const auto lb = evaluate_sequential(*model, corpus, T, a.batch, a.max_batches);
  std::printf("ce=%.6f\nlatent=%.6f\ntotal=%.6f\nnats_per_byte=%.6f\n", lb.ce, lb.latent, lb.total, nats_per_byte(lb.ce));
  return kOk;
}

struct GenerateArgs {
  std::string checkpoint, prompt_file, out;
  std::size_t chunks = 0;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  bool lossy = false;
};

int run_generate(const GenerateArgs& a) {
  auto model = model_from_checkpoint(a.checkpoint);
  const auto prompt = read_corpus(a.prompt_file);
  require(!prompt.empty(), ErrorKind::InvalidArgument, "prompt file '" + a.prompt_file + "' is empty");
  auto [padded, pad] = pad_prompt(prompt, model->config().chunk);
  if (pad) std::fprintf(stderr, "holobyte generate: prompt left-padded with %zu space byte(s)\n", pad);
  const auto bytes = model->generate(padded, a.chunks, a.temperature, a.seed);
  Sink sink(a.out, true);
  if (a.lossy) {
    sink.stream() << lossy_utf8(bytes);
  } else {
    sink.stream().write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  sink.finish();
  return kOk;
}

struct CapacityArgs {
  std::vector<std::size_t> dims{8, 16, 32, 64, 128};
  std::size_t chunk = 8, trials = 10000;
  std::uint64_t seed = 42;
  std::string out;
};

int run_capacity(const CapacityArgs& a) {
  const auto reports = recovery_experiment(a.dims, a.chunk, a.trials, a.seed);
  Sink sink(a.out);
  write_capacity_csv(sink.stream(), reports);
  sink.finish();
  const double closed = static_cast<double>(a.chunk - 1) / static_cast<double>(a.chunk);
  for (const auto& r : reports) {
    const double mc = measure_interference(r.dim, a.chunk, a.trials, a.seed);
    std::fprintf(stderr, "D=%zu W=%zu recovery=%.6f chunk_recovery=%.6f interference=%.6f (closed form %.6f)\n", r.dim,
                 r.chunk, r.recovery_rate, r.chunk_recovery_rate, mc, closed);
  }
  const auto fit = fit_failure_slope(reports);
  if (fit.points >= 2)
    std::fprintf(stderr, "log(1 - recovery) ~ %.6g * D + %.6g over %zu points\n", fit.slope, fit.intercept, fit.points);
  return kOk;
}

struct BenchArgs {
  std::uint64_t bytes = 8192, chunk = 8, dim = 768;
  std::size_t macro_layers = 1;
  bool wallclock = false;
  std::string out;
};

int run_bench_cmd(const BenchArgs& a) {
  const auto r = run_bench(a.bytes, a.chunk, a.dim, a.wallclock, a.macro_layers);
  Sink sink(a.out);
  write_bench_csv(sink.stream(), r, a.wallclock);
  sink.finish();
  std::fprintf(stderr, "native/holobyte: %.2fx overall, %.2fx macro-only; measured %s predicted\n", r.total_ratio(),
               r.macro_ratio(), r.measured == r.predicted ? "==" : "!=");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HoloByte byte-level language model toolkit"};
  app.require_subcommand(1);
  app.footer(
      "Exit codes: 0 ok, 1 usage, 2 io/corrupt/mismatched file, 3 numerical fault.\n"
      "HOLOBYTE_THREADS caps kernel parallelism.");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a key=value config file");
  train_cmd->add_option("--config", ta.config, "Config file (key=value per line)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--override", ta.overrides, "Extra key=value settings applied after the file");
  train_cmd->footer(std::string("Metric CSV (log_path) header: ") + kMetricHeader);

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a byte corpus");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--corpus", ea.corpus, "Raw byte corpus")->required();
  eval_cmd->add_option("--seq-chunks", ea.seq_chunks, "Chunks per window (default: model max_chunks)");
  eval_cmd->add_option("--batch", ea.batch, "Windows per forward pass")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--max-batches", ea.max_batches, "Stop after this many batches (0 = whole corpus)");

  GenerateArgs ga;
  auto* gen_cmd = app.add_subcommand("generate", "Sample continuation bytes from a checkpoint");
  gen_cmd->add_option("--checkpoint", ga.checkpoint, "Checkpoint file")->required();
  gen_cmd->add_option("--prompt-file", ga.prompt_file, "Prompt bytes (left-padded with spaces to a chunk boundary)")
      ->required();
  gen_cmd->add_option("--chunks", ga.chunks, "Number of chunks to generate")->required();
  gen_cmd->add_option("--temperature", ga.temperature, "Sampling temperature; 0 is greedy")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--seed", ga.seed, "Sampling seed");
  gen_cmd->add_option("--out", ga.out, "Output file (default stdout)");
  gen_cmd->add_flag("--lossy-utf8", ga.lossy, "Replace invalid UTF-8 with U+FFFD for display");

  CapacityArgs ca;
  auto* cap_cmd = app.add_subcommand("capacity", "Monte-Carlo recovery and interference experiment");
  cap_cmd->add_option("--dims", ca.dims, "Comma-separated embedding dimensions")->delimiter(',');
  cap_cmd->add_option("--chunk", ca.chunk, "Chunk size W")->check(CLI::PositiveNumber);
  cap_cmd->add_option("--trials", ca.trials, "Trials per dimension (>= 1000)");
  cap_cmd->add_option("--seed", ca.seed, "Seed");
  cap_cmd->add_option("--out", ca.out, "CSV output (default stdout)");
  cap_cmd->footer("CSV header: dim,chunk,vocab,trials,recovery_rate,mean_interference_sq");

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "Count attention-map elements of one forward pass");
  bench_cmd->add_option("--bytes", ba.bytes, "Sequence length N in bytes");
  bench_cmd->add_option("--chunk", ba.chunk, "Chunk size W (must divide N)");
  bench_cmd->add_option("--dim", ba.dim, "Embedding dimension D");
  bench_cmd->add_option("--macro-layers", ba.macro_layers, "Macro layers instantiated")->check(CLI::PositiveNumber);
  bench_cmd->add_flag("--wallclock", ba.wallclock, "Add a wall_seconds column");
  bench_cmd->add_option("--out", ba.out, "CSV output (default stdout)");
  bench_cmd->footer(
      "CSV header: layout,N,W,D,macro_attn_elems,micro_attn_elems,total_elems,predicted,measured[,wall_seconds]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "holobyte: %s (see --help)\n", e.what());
    return kUsage;
  }

  try {
    if (*train_cmd) return run_train(ta);
    if (*eval_cmd) return run_eval(ea);
    if (*gen_cmd) return run_generate(ga);
    if (*cap_cmd) return run_capacity(ca);
    if (*bench_cmd) return run_bench_cmd(ba);
  } catch (const NumericalFault& e) {
    std::fprintf(stderr, "holobyte: numerical fault in %s: %s\n", e.tensor_id().c_str(), e.what());
    return kNumeric;
  } catch (const Error& e) {
    std::fprintf(stderr, "holobyte: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "holobyte: %s\n", e.what());
    return kIo;
  }
  return kUsage;
}
