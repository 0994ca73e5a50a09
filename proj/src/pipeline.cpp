#include "havana/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "havana/errors.hpp"
#include "havana/format.hpp"

namespace havana {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* wanted) {
  throw UsageError("config key '" + key + "': cannot parse '" + value + "' as " + wanted);
}

long long parse_ll(const std::string& key, const std::string& value) {
  const char* s = value.c_str();
  char* end = nullptr;
  long long v = std::strtoll(s, &end, 10);
  if (end == s || *end != '\0') bad_value(key, value, "an integer");
  return v;
}

int parse_int(const std::string& key, const std::string& value) {
  long long v = parse_ll(key, value);
  if (v < -(1ll << 31) || v > (1ll << 31)) bad_value(key, value, "an integer");
  return static_cast<int>(v);
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  long long v = parse_ll(key, value);
  if (v < 0) bad_value(key, value, "a non-negative integer");
  return static_cast<std::size_t>(v);
}

double parse_double(const std::string& key, const std::string& value) {
  const char* s = value.c_str();
  char* end = nullptr;
  double v = std::strtod(s, &end);
  if (end == s || *end != '\0') bad_value(key, value, "a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  std::string v = value;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  bad_value(key, value, "a boolean (on/off)");
}

template <typename Get>
ConfigKey int_key(const std::string& name, const std::string& help, Get get) {
  return {name, help,
          [name, get](RunConfig& c, const std::string& v) { get(c) = parse_int(name, v); },
          [get](const RunConfig& c) { return std::to_string(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
ConfigKey size_key(const std::string& name, const std::string& help, Get get) {
  return {name, help,
          [name, get](RunConfig& c, const std::string& v) { get(c) = parse_size(name, v); },
          [get](const RunConfig& c) { return std::to_string(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
ConfigKey double_key(const std::string& name, const std::string& help, Get get) {
  return {name, help,
          [name, get](RunConfig& c, const std::string& v) { get(c) = parse_double(name, v); },
          [get](const RunConfig& c) { return format_double(get(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
ConfigKey bool_key(const std::string& name, const std::string& help, Get get) {
  return {name, help,
          [name, get](RunConfig& c, const std::string& v) { get(c) = parse_bool(name, v); },
          [get](const RunConfig& c) {
            return get(const_cast<RunConfig&>(c)) ? std::string("on") : std::string("off");
          }};
}

template <typename Get>
ConfigKey string_key(const std::string& name, const std::string& help, Get get) {
  return {name, help,
          [get](RunConfig& c, const std::string& v) { get(c) = v; },
          [get](const RunConfig& c) { return get(const_cast<RunConfig&>(c)); }};
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;

  // Synthetic data.
  k.push_back(int_key("num_ids", "train identities in the synthetic set",
                      [](RunConfig& c) -> int& { return c.synth.num_ids; }));
  k.push_back(int_key("samples_per_id", "train samples per identity",
                      [](RunConfig& c) -> int& { return c.synth.samples_per_id; }));
  k.push_back(int_key("dim", "feature dimension D",
                      [](RunConfig& c) -> int& { return c.synth.dim; }));
  k.push_back(double_key("id_scale", "identity center scale s_id",
                         [](RunConfig& c) -> double& { return c.synth.id_scale; }));
  k.push_back(int_key("num_factors", "shared variation factors K_v",
                      [](RunConfig& c) -> int& { return c.synth.num_factors; }));
  k.push_back(double_key("variation_scale", "factor coefficient scale s_var",
                         [](RunConfig& c) -> double& { return c.synth.variation_scale; }));
  k.push_back(double_key("noise_scale", "isotropic noise scale s_noise",
                         [](RunConfig& c) -> double& { return c.synth.noise_scale; }));
  k.push_back(int_key("num_cameras", "cameras assigned round-robin",
                      [](RunConfig& c) -> int& { return c.synth.num_cameras; }));
  k.push_back(int_key("eval_ids", "held-out identities for query/gallery",
                      [](RunConfig& c) -> int& { return c.synth.eval_ids; }));
  k.push_back(int_key("query_per_id", "query samples per eval identity",
                      [](RunConfig& c) -> int& { return c.synth.query_per_id; }));
  k.push_back(int_key("gallery_per_id", "gallery samples per eval identity",
                      [](RunConfig& c) -> int& { return c.synth.gallery_per_id; }));

  // Model shape and toggles.
  k.push_back(size_key("hidden_dim", "trunk width H (0: use D)",
                       [](RunConfig& c) -> std::size_t& { return c.hidden_dim; }));
  k.push_back(size_key("latent_dim", "latent width L (0: use H)",
                       [](RunConfig& c) -> std::size_t& { return c.latent_dim; }));
  k.push_back(size_key("hvd_dim", "variation width M (0: use L/4)",
                       [](RunConfig& c) -> std::size_t& { return c.hvd_dim; }));
  k.push_back(bool_key("covariance_constraint", "enforce z sigma = 1 (the C component)",
                       [](RunConfig& c) -> bool& {
                         return c.train.weights.covariance_constraint;
                       }));
  k.push_back(bool_key("use_hvd", "train the hierarchical variation distiller (H)",
                       [](RunConfig& c) -> bool& { return c.train.toggles.use_hvd; }));
  k.push_back(bool_key("use_jst", "use the JS triplet loss (J); off: Euclidean triplet",
                       [](RunConfig& c) -> bool& { return c.train.toggles.use_jst; }));

  // Loss weights.
  k.push_back(double_key("alpha", "ELBO weight",
                         [](RunConfig& c) -> double& { return c.train.weights.alpha; }));
  k.push_back(double_key("beta", "KL weight inside the ELBO",
                         [](RunConfig& c) -> double& { return c.train.weights.beta; }));
  k.push_back(double_key("lambda_jst", "JS-triplet weight",
                         [](RunConfig& c) -> double& { return c.train.weights.lambda_jst; }));
  k.push_back(double_key("gamma", "triplet margin",
                         [](RunConfig& c) -> double& { return c.train.weights.gamma; }));
  k.push_back(double_key("label_smoothing_eps", "classifier label smoothing mass",
                         [](RunConfig& c) -> double& {
                           return c.train.weights.label_smoothing_eps;
                         }));

  // Training.
  k.push_back(double_key("lr", "learning rate after warmup",
                         [](RunConfig& c) -> double& { return c.train.lr; }));
  k.push_back(double_key("weight_decay", "additive L2 weight decay",
                         [](RunConfig& c) -> double& { return c.train.weight_decay; }));
  k.push_back(int_key("epochs", "training epochs",
                      [](RunConfig& c) -> int& { return c.train.epochs; }));
  k.push_back(int_key("warmup_epochs", "linear warmup span",
                      [](RunConfig& c) -> int& { return c.train.warmup_epochs; }));
  k.push_back(size_key("batch_p", "identities per batch",
                       [](RunConfig& c) -> std::size_t& { return c.train.batch_p; }));
  k.push_back(size_key("batch_k", "samples per identity per batch",
                       [](RunConfig& c) -> std::size_t& { return c.train.batch_k; }));
  k.push_back(ConfigKey{
      "seed", "root seed for synthesis, init, and batching",
      [](RunConfig& c, const std::string& v) {
        long long s = parse_ll("seed", v);
        c.train.seed = static_cast<std::uint64_t>(s);
        c.synth.seed = static_cast<std::uint64_t>(s);
      },
      [](const RunConfig& c) { return std::to_string(c.train.seed); }});
  k.push_back(ConfigKey{
      "precision", "f32 (round every op to float) or f64",
      [](RunConfig& c, const std::string& v) {
        if (v == "f32") {
          c.train.precision_mode = Precision::f32;
        } else if (v == "f64") {
          c.train.precision_mode = Precision::f64;
        } else {
          bad_value("precision", v, "f32 or f64");
        }
      },
      [](const RunConfig& c) {
        return c.train.precision_mode == Precision::f32 ? std::string("f32")
                                                        : std::string("f64");
      }});
  k.push_back(int_key("checkpoint_every", "checkpoint cadence in epochs (0: final only)",
                      [](RunConfig& c) -> int& { return c.train.checkpoint_every; }));

  // Paths.
  k.push_back(string_key("train_features", "training HVFT file",
                         [](RunConfig& c) -> std::string& { return c.train_features; }));
  k.push_back(string_key("query_features", "query HVFT file",
                         [](RunConfig& c) -> std::string& { return c.query_features; }));
  k.push_back(string_key("gallery_features", "gallery HVFT file",
                         [](RunConfig& c) -> std::string& { return c.gallery_features; }));
  k.push_back(string_key("factors_file", "ground-truth factor HVFT file",
                         [](RunConfig& c) -> std::string& { return c.factors_file; }));
  k.push_back(string_key("checkpoint_dir", "directory for training checkpoints",
                         [](RunConfig& c) -> std::string& { return c.checkpoint_dir; }));
  k.push_back(string_key("log_file", "per-epoch loss log",
                         [](RunConfig& c) -> std::string& { return c.log_file; }));
  k.push_back(string_key("checkpoint", "checkpoint to evaluate or embed with",
                         [](RunConfig& c) -> std::string& { return c.checkpoint; }));
  k.push_back(string_key("resume", "checkpoint to continue training from",
                         [](RunConfig& c) -> std::string& { return c.resume; }));
  k.push_back(string_key("metrics_file", "metric,value output of eval",
                         [](RunConfig& c) -> std::string& { return c.metrics_file; }));
  k.push_back(string_key("embed_features", "input HVFT file for embed",
                         [](RunConfig& c) -> std::string& { return c.embed_features; }));
  k.push_back(string_key("embed_mu_file", "z_mu export path",
                         [](RunConfig& c) -> std::string& { return c.embed_mu_file; }));
  k.push_back(string_key("embed_sigma_file", "z_sigma export path",
                         [](RunConfig& c) -> std::string& { return c.embed_sigma_file; }));
  k.push_back(string_key("ablate_csv", "ablation output CSV",
                         [](RunConfig& c) -> std::string& { return c.ablate_csv; }));
  k.push_back(string_key("ablate_grid", "toggles, hyper, or both",
                         [](RunConfig& c) -> std::string& { return c.ablate_grid; }));
  k.push_back(string_key("ablate_alphas", "comma list of alpha values for the hyper grid",
                         [](RunConfig& c) -> std::string& { return c.ablate_alphas; }));
  k.push_back(string_key("ablate_betas", "comma list of beta values for the hyper grid",
                         [](RunConfig& c) -> std::string& { return c.ablate_betas; }));

  // Misc.
  k.push_back(int_key("num_threads", "evaluation worker threads",
                      [](RunConfig& c) -> int& { return c.num_threads; }));
  k.push_back(bool_key("quiet", "suppress progress output",
                       [](RunConfig& c) -> bool& { return c.quiet; }));
  return k;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const ConfigKey& k : config_keys()) {
    if (k.name == key) {
      k.set(*this, value);
      return;
    }
  }
  throw UsageError("unknown config key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  for (const ConfigKey& k : config_keys()) {
    if (k.name == key) return k.get(*this);
  }
  throw UsageError("unknown config key '" + key + "'");
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void load_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    std::size_t eq = body.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected 'key = value', got '" +
                       body + "'");
    }
    std::string key = trim(body.substr(0, eq));
    std::string value = trim(body.substr(eq + 1));
    if (key.empty()) {
      throw UsageError(path + ":" + std::to_string(lineno) + ": empty key");
    }
    try {
      config.set(key, value);
    } catch (const UsageError& e) {
      throw UsageError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

namespace {

void say(const RunConfig& cfg, const std::string& line) {
  if (!cfg.quiet) std::cout << line << "\n";
}

ModelDims dims_for(const RunConfig& cfg, std::size_t feat, std::size_t classes) {
  ModelDims d;
  d.feat = feat;
  d.hidden = cfg.hidden_dim;
  d.latent = cfg.latent_dim;
  d.hvd = cfg.hvd_dim;
  d.classes = classes;
  return d.resolved();
}

/// Model initialization draws from stream 1 of the user seed (the synthesizer
/// consumes the seed directly, epochs use streams 1000+).
constexpr std::uint64_t kInitStream = 1;

std::string describe(const FeatureSet& s) {
  return std::to_string(s.size()) + " x " + std::to_string(s.dim());
}

}  // namespace

void run_synth(const RunConfig& cfg) {
  SynthData data = synth_generate(cfg.synth);
  write_features(data.train, cfg.train_features);
  write_features(data.query, cfg.query_features);
  write_features(data.gallery, cfg.gallery_features);
  write_features(data.factors, cfg.factors_file);
  say(cfg, "wrote " + cfg.train_features + " (" + describe(data.train) + ")");
  say(cfg, "wrote " + cfg.query_features + " (" + describe(data.query) + ")");
  say(cfg, "wrote " + cfg.gallery_features + " (" + describe(data.gallery) + ")");
  say(cfg, "wrote " + cfg.factors_file + " (" + describe(data.factors) + ")");
}

void run_train(const RunConfig& cfg) {
  FeatureSet train_set = read_features(cfg.train_features, Split::train);
  std::size_t num_classes = 0;
  remap_to_contiguous(train_set, num_classes);
  ModelDims dims = dims_for(cfg, train_set.dim(), num_classes);

  Rng init_rng(Rng::derive(cfg.train.seed, kInitStream));
  set_precision(cfg.train.precision_mode);
  HavanaModel model = HavanaModel::init(dims, cfg.train.weights.covariance_constraint, init_rng);

  FitPaths paths{cfg.checkpoint_dir, cfg.log_file, cfg.resume};
  EpochCallback on_epoch;
  if (!cfg.quiet) {
    on_epoch = [](int epoch, const LossReport& r) {
      std::cout << "epoch " << epoch << ": total=" << format_double(r.total)
                << " cls=" << format_double(r.cls) << " jst=" << format_double(r.jst)
                << " reconx=" << format_double(r.reconx) << " klz=" << format_double(r.klz)
                << " klv=" << format_double(r.klv) << " reconz=" << format_double(r.reconz)
                << "\n";
    };
  }
  FitResult result = fit(model, train_set, cfg.train, paths, on_epoch);
  if (!result.final_checkpoint.empty()) {
    say(cfg, "wrote " + result.final_checkpoint);
  }
}

RetrievalResult run_eval(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) {
    throw UsageError("eval needs checkpoint=<model.hvck> (train writes model_final.hvck)");
  }
  set_precision(cfg.train.precision_mode);
  HavanaModel model = load_model(cfg.checkpoint);
  FeatureSet query = read_features(cfg.query_features, Split::query);
  FeatureSet gallery = read_features(cfg.gallery_features, Split::gallery);
  RetrievalResult result = evaluate_model(query, gallery, model, cfg.num_threads);
  if (!cfg.metrics_file.empty()) {
    write_metrics(cfg.metrics_file, result);
    say(cfg, "wrote " + cfg.metrics_file);
  }
  say(cfg, "map=" + format_double(result.map) + " cmc1=" + format_double(result.cmc_at(1)) +
               " cmc5=" + format_double(result.cmc_at(5)) +
               " cmc10=" + format_double(result.cmc_at(10)) + " (" +
               std::to_string(result.per_query_ap.size()) + " queries, " +
               std::to_string(result.skipped) + " skipped)");
  return result;
}

void run_embed(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) {
    throw UsageError("embed needs checkpoint=<model.hvck>");
  }
  if (cfg.embed_features.empty()) {
    throw UsageError("embed needs embed_features=<set.hvft>");
  }
  set_precision(cfg.train.precision_mode);
  HavanaModel model = load_model(cfg.checkpoint);
  FeatureSet set = read_features(cfg.embed_features, Split::query);
  export_embeddings(set, model, cfg.embed_mu_file, cfg.embed_sigma_file);
  say(cfg, "wrote " + cfg.embed_mu_file + " and " + cfg.embed_sigma_file + " (" +
               describe(set) + " inputs)");
}

namespace {

struct AblateRow {
  bool v, j, h, c;
  double alpha, beta;
};

std::vector<double> parse_list(const std::string& key, const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_double(key, item));
  }
  if (out.empty()) throw UsageError("config key '" + key + "': empty list");
  return out;
}

}  // namespace

void run_ablate(const RunConfig& cfg) {
  std::vector<AblateRow> rows;
  double a0 = cfg.train.weights.alpha;
  double b0 = cfg.train.weights.beta;
  if (cfg.ablate_grid == "toggles" || cfg.ablate_grid == "both") {
    rows.push_back({false, false, false, false, a0, b0});
    rows.push_back({true, false, false, false, a0, b0});
    rows.push_back({true, true, false, false, a0, b0});
    rows.push_back({true, true, true, false, a0, b0});
    rows.push_back({true, true, true, true, a0, b0});
  }
  if (cfg.ablate_grid == "hyper" || cfg.ablate_grid == "both") {
    for (double a : parse_list("ablate_alphas", cfg.ablate_alphas)) {
      for (double b : parse_list("ablate_betas", cfg.ablate_betas)) {
        rows.push_back({true, true, true, true, a, b});
      }
    }
  }
  if (rows.empty()) {
    throw UsageError("ablate_grid must be toggles, hyper, or both; got '" + cfg.ablate_grid +
                     "'");
  }

  FeatureSet train_set = read_features(cfg.train_features, Split::train);
  FeatureSet query = read_features(cfg.query_features, Split::query);
  FeatureSet gallery = read_features(cfg.gallery_features, Split::gallery);
  std::size_t num_classes = 0;
  remap_to_contiguous(train_set, num_classes);
  ModelDims dims = dims_for(cfg, train_set.dim(), num_classes);

  std::ofstream csv(cfg.ablate_csv, std::ios::trunc);
  if (!csv) throw DataError("cannot write ablation CSV " + cfg.ablate_csv);
  csv << "V,J,H,C,alpha,beta,map,cmc1,cmc5,cmc10\n";

  for (const AblateRow& row : rows) {
    RetrievalResult result;
    if (!row.v) {
      result = evaluate(query, gallery, [](const Tensor& x) { return x; }, cfg.num_threads);
    } else {
      TrainConfig tc = cfg.train;
      tc.weights.alpha = row.alpha;
      tc.weights.beta = row.beta;
      tc.weights.covariance_constraint = row.c;
      tc.toggles.use_hvd = row.h;
      tc.toggles.use_jst = row.j;
      Rng init_rng(Rng::derive(tc.seed, kInitStream));
      set_precision(tc.precision_mode);
      HavanaModel model = HavanaModel::init(dims, row.c, init_rng);
      fit(model, train_set, tc, FitPaths{});
      result = evaluate_model(query, gallery, model, cfg.num_threads);
    }
    csv << (row.v ? 1 : 0) << ',' << (row.j ? 1 : 0) << ',' << (row.h ? 1 : 0) << ','
        << (row.c ? 1 : 0) << ',' << format_double(row.alpha) << ',' << format_double(row.beta)
        << ',' << format_double(result.map) << ',' << format_double(result.cmc_at(1)) << ','
        << format_double(result.cmc_at(5)) << ',' << format_double(result.cmc_at(10)) << '\n';
    csv.flush();
    say(cfg, std::string("ablate V=") + (row.v ? "1" : "0") + " J=" + (row.j ? "1" : "0") +
                 " H=" + (row.h ? "1" : "0") + " C=" + (row.c ? "1" : "0") +
                 " alpha=" + format_double(row.alpha) + " beta=" + format_double(row.beta) +
                 ": map=" + format_double(result.map));
  }
  say(cfg, "wrote " + cfg.ablate_csv);
}

}  // namespace havana
