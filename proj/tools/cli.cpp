#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "flowcrypt/crypt.hpp"
#include "flowcrypt/dataset.hpp"
#include "flowcrypt/error.hpp"
#include "flowcrypt/flow.hpp"
#include "flowcrypt/leakage.hpp"
#include "flowcrypt/linalg.hpp"
#include "flowcrypt/security.hpp"
#include "flowcrypt/train.hpp"

namespace flowcrypt::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kSchemaVersion = 1;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo: return 2;
    case ErrorKind::kInvalidArgument: return 3;
    case ErrorKind::kDegenerateData: return 4;
    case ErrorKind::kShapeMismatch: return 5;
    case ErrorKind::kCorruption: return 6;
    case ErrorKind::kValidation: return 6;
    case ErrorKind::kNumerical: return 1;
  }
  return 1;
}

struct Globals {
  std::optional<std::uint64_t> seed_flag;
  std::size_t threads = 1;
  std::string format = "auto";
  bool csv_labels = false;
  std::string report;

  // --seed, else FLOWCRYPT_SEED, else nothing.
  std::optional<std::uint64_t> explicit_seed() const {
    if (seed_flag) return seed_flag;
    if (const char* env = std::getenv("FLOWCRYPT_SEED"); env && *env) {
      try {
        std::size_t used = 0;
        const auto v = std::stoull(env, &used);
        require(used == std::string(env).size(), ErrorKind::kInvalidArgument, "");
        return v;
      } catch (...) {
        fail(ErrorKind::kInvalidArgument, std::string("FLOWCRYPT_SEED is not an unsigned integer: ") + env);
      }
    }
    return std::nullopt;
  }
  std::uint64_t seed() const { return explicit_seed().value_or(0); }
};

bool is_csv(const fs::path& path, const std::string& format) {
  if (format == "csv") return true;
  if (format == "ftns") return false;
  return path.extension() == ".csv";
}

data::LabeledData load_data(const fs::path& path, const Globals& g) {
  if (is_csv(path, g.format)) return data::read_csv(path, g.csv_labels);
  return data::load_tensor(path);
}

void save_data(const data::LabeledData& d, const fs::path& path, const Globals& g) {
  if (is_csv(path, g.format)) {
    data::write_csv(d, path);
  } else {
    data::save_tensor(d, path);
  }
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidArgument, path.string() + ": invalid JSON: " + e.what());
  }
}

void emit(const json& report, const Globals& g, std::ostream& out) {
  if (g.report.empty()) {
    out << report.dump(2) << "\n";
    return;
  }
  std::ofstream f(g.report);
  if (!f) fail(ErrorKind::kIo, "cannot write report " + g.report);
  f << report.dump(2) << "\n";
  if (!f) fail(ErrorKind::kIo, "failed writing report " + g.report);
}

// ---- subcommands -----------------------------------------------------------------

struct KeygenArgs {
  std::size_t dim = 0;
  std::string out;
};

void cmd_keygen(const KeygenArgs& a, const Globals& g, std::ostream& out) {
  const auto key = linalg::sample_haar_orthogonal(a.dim, g.seed());
  linalg::save_key(key, a.out);
  emit({{"schema_version", kSchemaVersion}, {"key", a.out}, {"dim", a.dim}, {"seed", g.seed()}}, g, out);
}

struct TrainArgs {
  std::string data;
  std::string config;
  std::string out_model;
  std::string log;
  std::optional<std::size_t> steps;
  bool untrained = false;
};

void cmd_train(const TrainArgs& a, const Globals& g, std::ostream& out) {
  train::TrainConfig config;
  if (!a.config.empty()) config = train::train_config_from_json(read_json_file(a.config));
  if (auto s = g.explicit_seed()) config.seed = *s;
  if (a.steps) config.steps = *a.steps;
  train::validate(config);
  const auto d = load_data(a.data, g);

  json report{{"schema_version", kSchemaVersion}, {"model", a.out_model}, {"seed", config.seed}};
  if (a.untrained) {
    const auto model = flow::build_flow(static_cast<std::size_t>(d.samples.cols()), config.architecture, config.seed);
    flow::save_model(model, a.out_model);
    report["trained"] = false;
    report["nll"] = flow::mean_nll(model, d.samples);
  } else {
    const auto result = train::train_flow(d.samples, config);
    flow::save_model(result.model, a.out_model);
    const std::string log = a.log.empty() ? a.out_model + ".log.jsonl" : a.log;
    std::ofstream f(log);
    if (!f) fail(ErrorKind::kIo, "cannot write training log " + log);
    f << train::training_log_jsonl(result.curve);
    report["trained"] = true;
    report["steps"] = config.steps;
    report["initial_nll"] = result.initial_nll;
    report["final_nll"] = result.final_nll;
    report["log"] = log;
  }
  emit(report, g, out);
}

struct CryptArgs {
  std::string model;
  std::string key;
  std::string class_map;
  std::string data;
  std::string out;
};

crypt::ClasswiseContext load_class_map(const fs::path& manifest) {
  const json j = read_json_file(manifest);
  require(j.is_object() && !j.empty(), ErrorKind::kInvalidArgument,
          "class map must be a non-empty JSON object: label -> {model, key}");
  const auto base = manifest.parent_path();
  std::map<data::Label, crypt::EncryptionContext> contexts;
  for (const auto& [name, entry] : j.items()) {
    data::Label label = 0;
    try {
      std::size_t used = 0;
      const auto v = std::stoull(name, &used);
      require(used == name.size() && v <= 0xffffffffULL, ErrorKind::kInvalidArgument, "");
      label = static_cast<data::Label>(v);
    } catch (...) {
      fail(ErrorKind::kInvalidArgument, "class map key is not a label: " + name);
    }
    require(entry.is_object() && entry.contains("model") && entry.contains("key"), ErrorKind::kInvalidArgument,
            "class map entry " + name + " needs \"model\" and \"key\"");
    const fs::path model = entry["model"].get<std::string>();
    const fs::path key = entry["key"].get<std::string>();
    contexts.emplace(label, crypt::load_context(model.is_absolute() ? model : base / model,
                                                key.is_absolute() ? key : base / key));
  }
  return crypt::ClasswiseContext(std::move(contexts));
}

void cmd_crypt(const CryptArgs& a, bool encrypt, const Globals& g, std::ostream& out) {
  const auto d = load_data(a.data, g);
  data::LabeledData result;
  std::string provenance;
  if (!a.class_map.empty()) {
    require(a.model.empty() && a.key.empty(), ErrorKind::kInvalidArgument,
            "--class-map replaces --model/--key; give one or the other");
    const auto ctx = load_class_map(a.class_map);
    auto enc = encrypt ? crypt::encrypt_dataset(ctx, d) : crypt::decrypt_dataset(ctx, d);
    result = {std::move(enc.samples), std::move(enc.labels)};
    provenance = enc.provenance;
  } else {
    require(!a.model.empty() && !a.key.empty(), ErrorKind::kInvalidArgument,
            "--model and --key are required without --class-map");
    const auto ctx = crypt::load_context(a.model, a.key);
    result.samples = encrypt ? crypt::encrypt_rows(ctx, d.samples) : crypt::decrypt_rows(ctx, d.samples);
    result.labels = d.labels;
    provenance = crypt::context_fingerprint(ctx);
  }
  save_data(result, a.out, g);
  emit({{"schema_version", kSchemaVersion},
        {"operation", encrypt ? "encrypt" : "decrypt"},
        {"out", a.out},
        {"n", result.samples.rows()},
        {"dim", result.samples.cols()},
        {"provenance", provenance}},
       g, out);
}

struct BpdArgs {
  std::string model;
  std::string data;
  double alpha = flow::kDefaultDequantAlpha;
  bool continuous = false;
};

void cmd_eval_bpd(const BpdArgs& a, const Globals& g, std::ostream& out) {
  require(a.alpha >= 0.0 && a.alpha < 0.5, ErrorKind::kInvalidArgument, "--alpha must lie in [0, 0.5)");
  const auto model = flow::load_model(a.model);
  const auto d = load_data(a.data, g);
  require(static_cast<std::size_t>(d.samples.cols()) == model.dim, ErrorKind::kShapeMismatch,
          "data dimension " + std::to_string(d.samples.cols()) + " does not match model dimension " +
              std::to_string(model.dim));
  json report{{"schema_version", kSchemaVersion}, {"n", d.samples.rows()}};
  if (a.continuous) {
    report["bpd"] = flow::bits_per_dim_continuous(model, d.samples);
    report["mode"] = "continuous";
  } else {
    Eigen::MatrixXi ints(d.samples.rows(), d.samples.cols());
    for (Eigen::Index i = 0; i < ints.rows(); ++i)
      for (Eigen::Index j = 0; j < ints.cols(); ++j) {
        const double v = d.samples(i, j);
        require(v == std::floor(v) && v >= 0 && v < 256, ErrorKind::kInvalidArgument,
                "dequantized evaluation needs integer data in [0, 256); use --continuous for real-valued data");
        ints(i, j) = static_cast<int>(v);
      }
    report["bpd"] = flow::bits_per_dim(model, ints, a.alpha);
    report["mode"] = "dequantized";
    report["alpha"] = a.alpha;
  }
  emit(report, g, out);
}

struct TvArgs {
  std::string p;
  std::string q;
  std::size_t bootstrap = 200;
};

void cmd_estimate_tv(const TvArgs& a, const Globals& g, std::ostream& out) {
  const auto p = load_data(a.p, g);
  const auto q = load_data(a.q, g);
  Rng rng(g.seed());
  const auto est = security::tv_empirical(p.samples, q.samples, rng, {a.bootstrap, 3});
  json report{{"schema_version", kSchemaVersion},
              {"tv", {{"value", est.value}, {"method", security::to_string(est.method)}, {"ci", est.ci_halfwidth}}},
              {"n_p", p.samples.rows()},
              {"n_q", q.samples.rows()},
              {"seed", g.seed()}};
  if (est.method == security::TvMethod::kClassifierLowerBound)
    report["note"] = "classifier estimate is a lower bound on TV";
  emit(report, g, out);
}

struct AuditArgs {
  double theta = 0.25;
  std::size_t n = 10;
  std::size_t trials = 1000;
  std::string source = "exact-gaussian";
  std::string model;
  std::string data;
  std::size_t grid = 64;
  std::size_t ball_samples = linalg::kDefaultBallSamples;
};

void cmd_audit(const AuditArgs& a, const Globals& g, std::ostream& out) {
  security::AuditConfig c;
  c.theta = a.theta;
  c.n = a.n;
  c.trials = a.trials;
  c.seed = g.seed();
  c.grid_size = a.grid;
  c.threads = g.threads;
  c.ball_samples = a.ball_samples;
  security::AuditReport r;
  if (a.source == "exact-gaussian") {
    r = security::theorem_bound_audit(c);
  } else {
    require(!a.model.empty() && !a.data.empty(), ErrorKind::kInvalidArgument,
            "--source trained-flow needs --model and --data");
    r = security::theorem_bound_audit(flow::load_model(a.model), load_data(a.data, g).samples, c);
  }
  emit(security::to_json(r), g, out);
}

struct DlgArgs {
  std::string victim_config;
  std::string data;
  std::size_t row = 0;
  bool encrypted = false;
  std::string model;
  std::string key;
};

void cmd_attack_dlg(const DlgArgs& a, const Globals& g, std::ostream& out) {
  const json vc = read_json_file(a.victim_config);
  const auto d = load_data(a.data, g);
  require(static_cast<Eigen::Index>(a.row) < d.samples.rows(), ErrorKind::kInvalidArgument,
          "--row " + std::to_string(a.row) + " is out of range");
  const Eigen::VectorXd original = d.samples.row(static_cast<Eigen::Index>(a.row)).transpose();
  const auto dim = static_cast<std::size_t>(original.size());
  const auto victim_seed = vc.value("seed", std::uint64_t{0});
  Rng rng(victim_seed);

  const std::string type = vc.value("type", std::string("mlp"));
  leakage::Victim victim;
  Eigen::VectorXd label;
  if (type == "linear") {
    const auto in = vc.value("input_dim", dim);
    victim = leakage::LinearVictim{standard_normal_matrix(static_cast<Eigen::Index>(in), 1, rng).col(0),
                                   vc.value("bias", 0.1)};
    label = Eigen::VectorXd::Constant(1, vc.value("target", 1.0));
  } else if (type == "mlp") {
    const auto net = leakage::make_toy_classifier(vc.value("input_dim", dim), vc.value("hidden", std::size_t{16}),
                                                  vc.value("classes", std::size_t{4}), rng, vc.value("scale", 1.0));
    label = leakage::one_hot(vc.value("label", std::size_t{0}), net.classes());
    victim = net;
  } else {
    fail(ErrorKind::kInvalidArgument, "victim type must be \"linear\" or \"mlp\", got \"" + type + "\"");
  }
  require(leakage::input_dim(victim) == dim, ErrorKind::kShapeMismatch,
          "victim input_dim " + std::to_string(leakage::input_dim(victim)) + " does not match data dimension " +
              std::to_string(dim));

  // The agent's sample: encrypted before any gradient is computed.
  Eigen::VectorXd shared = original;
  if (a.encrypted) {
    require(!a.model.empty() && !a.key.empty(), ErrorKind::kInvalidArgument, "--encrypted needs --model and --key");
    shared = crypt::encrypt_sample(crypt::load_context(a.model, a.key), original);
  }
  const Eigen::VectorXd target = leakage::compute_gradients(victim, shared, label);

  leakage::DlgConfig c;
  const std::string opt = vc.value("optimizer", std::string("adam"));
  require(opt == "adam" || opt == "lbfgs", ErrorKind::kInvalidArgument, "optimizer must be \"adam\" or \"lbfgs\"");
  c.optimizer = opt == "adam" ? leakage::DlgOptimizer::kAdam : leakage::DlgOptimizer::kLbfgs;
  c.learning_rate = vc.value("learning_rate", opt == "adam" ? 0.1 : 1.0);
  c.iterations = vc.value("iterations", std::size_t{300});
  c.restarts = vc.value("restarts", std::size_t{1});
  c.seed = g.seed();
  if (vc.value("known_label", true)) c.known_label = label;

  const auto result = leakage::dlg_attack(victim, target, c);
  leakage::AttackReport report;
  report.result = result;
  report.mse_vs_target = leakage::mse(result.x, shared);
  if (a.encrypted) report.mse_vs_original = leakage::mse(result.x, original);
  report.seed = c.seed;
  report.optimizer = opt;
  report.victim = type;
  json j = leakage::to_json(report);
  j["encrypted"] = a.encrypted;
  emit(j, g, out);
}

struct GenArgs {
  std::string kind = "mixture";
  std::size_t n = 1000;
  std::size_t dim = 8;
  double shift = 2.0;
  std::string out;
};

void cmd_gen_data(const GenArgs& a, const Globals& g, std::ostream& out) {
  require(a.n >= 1, ErrorKind::kInvalidArgument, "--n must be at least 1");
  Rng rng(g.seed());
  data::LabeledData d;
  if (a.kind == "mixture") {
    d = data::gaussian_mixture_2d(a.n, rng);
  } else if (a.kind == "moons") {
    d = data::two_moons(a.n, rng);
  } else if (a.kind == "two-class") {
    d = data::two_class_gaussian(a.n, a.dim, a.shift, rng);
  } else {
    fail(ErrorKind::kInvalidArgument, "unknown --kind " + a.kind + " (mixture, moons, two-class)");
  }
  save_data(d, a.out, g);
  emit({{"schema_version", kSchemaVersion}, {"out", a.out}, {"kind", a.kind}, {"n", a.n}, {"seed", g.seed()}}, g,
       out);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Flow-model data encryption: keys, training, encryption, audits and leakage attacks", "flowcrypt"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed_flag, "Master seed (default: $FLOWCRYPT_SEED, else 0)");
  app.add_option("--threads", g.threads, "Worker threads for Monte Carlo commands")->check(CLI::PositiveNumber);
  app.add_option("--format", g.format, "Data file format (default: by extension)")
      ->check(CLI::IsMember({"auto", "ftns", "csv"}));
  app.add_flag("--csv-labels", g.csv_labels, "Trailing CSV column holds integer labels");
  app.add_option("--report", g.report, "Write the JSON report here instead of stdout");

  KeygenArgs keygen;
  auto* s_keygen = app.add_subcommand("keygen", "Sample a Haar-uniform orthogonal key");
  s_keygen->add_option("--dim", keygen.dim)->required();
  s_keygen->add_option("--out", keygen.out)->required();

  TrainArgs tr;
  auto* s_train = app.add_subcommand("train", "Train a flow by maximum likelihood");
  s_train->add_option("--data", tr.data)->required();
  s_train->add_option("--config", tr.config, "JSON training config");
  s_train->add_option("--out-model", tr.out_model)->required();
  s_train->add_option("--log", tr.log, "JSONL training log (default: <out-model>.log.jsonl)");
  s_train->add_option("--steps", tr.steps, "Override the configured step count");
  s_train->add_flag("--untrained", tr.untrained, "Write the freshly initialized flow without training");

  CryptArgs enc, dec;
  auto* s_enc = app.add_subcommand("encrypt", "Encrypt a dataset");
  auto* s_dec = app.add_subcommand("decrypt", "Decrypt a dataset");
  for (auto [sub, args] : {std::pair{s_enc, &enc}, std::pair{s_dec, &dec}}) {
    sub->add_option("--model", args->model);
    sub->add_option("--key", args->key);
    sub->add_option("--class-map", args->class_map, "JSON manifest: label -> {model, key}");
    sub->add_option("--data", args->data)->required();
    sub->add_option("--out", args->out)->required();
  }

  BpdArgs bpd;
  auto* s_bpd = app.add_subcommand("eval-bpd", "Bits per dimension of data under a flow");
  s_bpd->add_option("--model", bpd.model)->required();
  s_bpd->add_option("--data", bpd.data)->required();
  s_bpd->add_option("--alpha", bpd.alpha, "Dequantization alpha in [0, 0.5)");
  s_bpd->add_flag("--continuous", bpd.continuous, "Data is real-valued; skip dequantization");

  TvArgs tv;
  auto* s_tv = app.add_subcommand("estimate-tv", "Estimate total variation between two sample sets");
  s_tv->add_option("--p", tv.p)->required();
  s_tv->add_option("--q", tv.q)->required();
  s_tv->add_option("--bootstrap", tv.bootstrap);

  AuditArgs audit;
  auto* s_audit = app.add_subcommand("audit", "Audit the key-recovery bound with an MLE adversary");
  s_audit->add_option("--theta", audit.theta);
  s_audit->add_option("--n", audit.n);
  s_audit->add_option("--trials", audit.trials);
  s_audit->add_option("--source", audit.source)->check(CLI::IsMember({"exact-gaussian", "trained-flow"}));
  s_audit->add_option("--model", audit.model);
  s_audit->add_option("--data", audit.data);
  s_audit->add_option("--grid", audit.grid);
  s_audit->add_option("--ball-samples", audit.ball_samples);

  DlgArgs dlg;
  auto* s_dlg = app.add_subcommand("attack-dlg", "Gradient-leakage reconstruction attack");
  s_dlg->add_option("--victim-config", dlg.victim_config)->required();
  s_dlg->add_option("--data", dlg.data)->required();
  s_dlg->add_option("--row", dlg.row);
  s_dlg->add_flag("--encrypted", dlg.encrypted, "Agent encrypts its sample with --model/--key first");
  s_dlg->add_option("--model", dlg.model);
  s_dlg->add_option("--key", dlg.key);

  GenArgs gen;
  auto* s_gen = app.add_subcommand("gen-data", "Write a toy dataset");
  s_gen->add_option("--kind", gen.kind);
  s_gen->add_option("--n", gen.n);
  s_gen->add_option("--dim", gen.dim);
  s_gen->add_option("--shift", gen.shift);
  s_gen->add_option("--out", gen.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 3;
  }

  try {
    if (s_keygen->parsed()) cmd_keygen(keygen, g, out);
    else if (s_train->parsed()) cmd_train(tr, g, out);
    else if (s_enc->parsed()) cmd_crypt(enc, true, g, out);
    else if (s_dec->parsed()) cmd_crypt(dec, false, g, out);
    else if (s_bpd->parsed()) cmd_eval_bpd(bpd, g, out);
    else if (s_tv->parsed()) cmd_estimate_tv(tv, g, out);
    else if (s_audit->parsed()) cmd_audit(audit, g, out);
    else if (s_dlg->parsed()) cmd_attack_dlg(dlg, g, out);
    else if (s_gen->parsed()) cmd_gen_data(gen, g, out);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    err << "error: invalid JSON value: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace flowcrypt::cli
