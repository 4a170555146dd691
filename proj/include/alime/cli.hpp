#pragma once

// Config-driven commands behind the `alime` executable: ingest, train-blackbox,
// train-ae, explain, fidelity and stability. Every file goes through an
// ArtifactStore that records content hashes in a manifest and refuses to
// change an existing artifact.

#include "alime/dataset.hpp"
#include "alime/error.hpp"
#include "alime/eval.hpp"
#include "alime/explain.hpp"
#include "alime/neuralnet.hpp"
#include "alime/sampler.hpp"
#include "alime/surrogate.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace alime::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { exit_ok = 0, exit_input = 2, exit_training = 3, exit_evaluation = 4 };

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string hash_bytes(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::missing_file, "cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline json read_json_file(const fs::path& path) {
  const auto text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, path.string() + ": " + e.what());
  }
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Configuration

struct DatasetSection {
  fs::path csv;
  fs::path schema;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
  std::optional<std::size_t> subsample;  // rows kept before splitting
  std::uint64_t subsample_seed = 0;
};

struct BlackBoxSection {
  std::array<std::size_t, 2> hidden{20, 10};
  bool grid_search = false;
  std::vector<std::size_t> neuron_range = default_neuron_range();
  bool cross_validate = true;
  std::size_t folds = 10;
  SelectionProtocol protocol = SelectionProtocol::validation;
  TrainConfig train;
};

struct AutoencoderSection {
  std::optional<std::size_t> latent_dim;
  double noise_std = 0.1;
  TrainConfig train;
};

struct ExplainSection {
  std::vector<std::size_t> instances;  // positions in the test split
  std::size_t count = 20;              // random picks when `instances` is empty
  std::uint64_t selection_seed = 0;
};

struct FidelitySection {
  std::optional<std::size_t> points;  // first `points` rows of the test split
  std::vector<std::size_t> n_grid = default_n_grid();
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct StabilitySection {
  std::optional<std::size_t> instance;  // position in the test split
  std::uint64_t selection_seed = 0;
  std::size_t runs = 20;
  std::vector<std::size_t> n_grid = default_n_grid();
  std::uint64_t seed = 0;
};

struct RunConfig {
  DatasetSection dataset;
  BlackBoxSection blackbox;
  AutoencoderSection autoencoder;
  ExplainerConfig explainer;
  ExplainSection explain;
  FidelitySection fidelity;
  StabilitySection stability;
  fs::path output_dir = "out";

  void validate() const {
    require(fs::is_regular_file(dataset.csv), ErrorCode::missing_file, "dataset csv not found: " + dataset.csv.string());
    require(fs::is_regular_file(dataset.schema), ErrorCode::missing_file,
            "schema not found: " + dataset.schema.string());
    require(dataset.train_fraction > 0.0 && dataset.train_fraction < 1.0, ErrorCode::invalid_argument,
            "dataset.train_fraction must be in (0, 1)");
    require(!dataset.subsample || *dataset.subsample >= 2, ErrorCode::invalid_argument, "dataset.subsample must be >= 2");
    require(blackbox.hidden[0] >= 1 && blackbox.hidden[1] >= 1, ErrorCode::invalid_argument,
            "blackbox.hidden sizes must be >= 1");
    require(blackbox.folds >= 2, ErrorCode::invalid_argument, "blackbox.folds must be >= 2");
    require(!blackbox.neuron_range.empty(), ErrorCode::invalid_argument, "blackbox.neuron_range is empty");
    blackbox.train.validate();
    autoencoder.train.validate();
    require(autoencoder.noise_std >= 0.0, ErrorCode::invalid_argument, "autoencoder.noise_std must be >= 0");
    require(!autoencoder.latent_dim || *autoencoder.latent_dim >= 1, ErrorCode::invalid_argument,
            "autoencoder.latent_dim must be >= 1");
    explainer.perturbation.validate();
    require(!explainer.kernel_width || *explainer.kernel_width > 0.0, ErrorCode::invalid_argument,
            "explainer.kernel_width must be positive");
    require(!fidelity.n_grid.empty() && !stability.n_grid.empty(), ErrorCode::invalid_argument, "empty n_grid");
    for (auto n : fidelity.n_grid) {
      require(n >= 1 && n <= explainer.perturbation.m, ErrorCode::grid_exceeds_pool,
              "fidelity n_grid value " + std::to_string(n) + " outside [1, m]");
    }
    for (auto n : stability.n_grid) {
      require(n >= 1 && n <= explainer.perturbation.m, ErrorCode::grid_exceeds_pool,
              "stability n_grid value " + std::to_string(n) + " outside [1, m]");
    }
    require(fidelity.threads >= 1, ErrorCode::invalid_argument, "fidelity.threads must be >= 1");
    require(stability.runs >= 2, ErrorCode::too_few_runs, "stability.runs must be >= 2");
  }
};

namespace detail {

inline TrainConfig train_from_json(const json& j, TrainConfig base) {
  base.max_epochs = j.value("max_epochs", base.max_epochs);
  base.patience = j.value("patience", base.patience);
  base.batch_size = j.value("batch_size", base.batch_size);
  base.adam.learning_rate = j.value("learning_rate", base.adam.learning_rate);
  base.seed = j.value("seed", base.seed);
  return base;
}

inline json train_to_json(const TrainConfig& c) {
  return {{"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"batch_size", c.batch_size},
          {"learning_rate", c.adam.learning_rate},
          {"seed", c.seed}};
}

template <typename T>
std::optional<T> optional_field(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

inline void require_known_keys(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw Error(ErrorCode::parse_error, "config section '" + section + "' must be an object");
  std::set<std::string> known(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    require(known.contains(it.key()), ErrorCode::parse_error,
            "unknown key '" + it.key() + "' in config section '" + section + "'");
  }
}

}  // namespace detail

/// Parses a run config. Relative dataset paths resolve against `base_dir`
/// (the directory holding the config file).
inline RunConfig parse_config(const json& j, const fs::path& base_dir = {}) {
  RunConfig c;
  try {
    detail::require_known_keys(j, "<root>",
                               {"dataset", "blackbox", "autoencoder", "explainer", "explain", "fidelity", "stability",
                                "output_dir"});
    const auto& d = j.at("dataset");
    detail::require_known_keys(d, "dataset",
                               {"csv", "schema", "train_fraction", "split_seed", "subsample", "subsample_seed"});
    auto resolve = [&](const std::string& p) {
      fs::path path(p);
      return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    c.dataset.csv = resolve(d.at("csv").get<std::string>());
    c.dataset.schema = resolve(d.at("schema").get<std::string>());
    c.dataset.train_fraction = d.value("train_fraction", c.dataset.train_fraction);
    c.dataset.split_seed = d.at("split_seed").get<std::uint64_t>();
    c.dataset.subsample = detail::optional_field<std::size_t>(d, "subsample");
    c.dataset.subsample_seed = d.value("subsample_seed", c.dataset.subsample_seed);

    if (j.contains("blackbox")) {
      const auto& b = j.at("blackbox");
      detail::require_known_keys(b, "blackbox",
                                 {"hidden", "grid_search", "neuron_range", "cross_validate", "folds", "selection",
                                  "max_epochs", "patience", "batch_size", "learning_rate", "seed"});
      if (b.contains("hidden")) {
        const auto h = b.at("hidden").get<std::vector<std::size_t>>();
        require(h.size() == 2, ErrorCode::parse_error, "blackbox.hidden must list two layer sizes");
        c.blackbox.hidden = {h[0], h[1]};
      }
      c.blackbox.grid_search = b.value("grid_search", c.blackbox.grid_search);
      c.blackbox.neuron_range = b.value("neuron_range", c.blackbox.neuron_range);
      c.blackbox.cross_validate = b.value("cross_validate", c.blackbox.cross_validate);
      c.blackbox.folds = b.value("folds", c.blackbox.folds);
      const auto sel = b.value("selection", std::string("validation"));
      require(sel == "validation" || sel == "paper-protocol", ErrorCode::parse_error,
              "blackbox.selection must be 'validation' or 'paper-protocol'");
      c.blackbox.protocol = sel == "validation" ? SelectionProtocol::validation : SelectionProtocol::paper_protocol;
      require(b.contains("seed"), ErrorCode::parse_error, "blackbox.seed is required");
      c.blackbox.train = detail::train_from_json(b, c.blackbox.train);
    }
    if (j.contains("autoencoder")) {
      const auto& a = j.at("autoencoder");
      detail::require_known_keys(a, "autoencoder",
                                 {"latent_dim", "noise_std", "max_epochs", "patience", "batch_size", "learning_rate",
                                  "seed"});
      c.autoencoder.latent_dim = detail::optional_field<std::size_t>(a, "latent_dim");
      c.autoencoder.noise_std = a.value("noise_std", c.autoencoder.noise_std);
      require(a.contains("seed"), ErrorCode::parse_error, "autoencoder.seed is required");
      c.autoencoder.train = detail::train_from_json(a, c.autoencoder.train);
    }
    if (j.contains("explainer")) {
      const auto& e = j.at("explainer");
      detail::require_known_keys(e, "explainer",
                                 {"method", "m", "n", "categorical_mode", "seed", "max_iter", "l2", "max_depth",
                                  "min_leaf_fraction", "kernel_width", "include_instance"});
      c.explainer.method = method_from_string(e.value("method", std::string("alime")));
      c.explainer.perturbation.m = e.value("m", c.explainer.perturbation.m);
      c.explainer.perturbation.n = e.value("n", c.explainer.perturbation.n);
      c.explainer.perturbation.categorical_mode =
          categorical_mode_from_string(e.value("categorical_mode", std::string("frequency")));
      require(e.contains("seed"), ErrorCode::parse_error, "explainer.seed is required");
      c.explainer.perturbation.seed = e.at("seed").get<std::uint64_t>();
      c.explainer.logistic.max_iter = e.value("max_iter", c.explainer.logistic.max_iter);
      c.explainer.logistic.l2 = e.value("l2", c.explainer.logistic.l2);
      if (e.contains("max_depth")) {
        c.explainer.cart.max_depth =
            e.at("max_depth").is_null() ? kUnlimitedDepth : e.at("max_depth").get<std::size_t>();
      }
      c.explainer.cart.min_leaf_fraction = e.value("min_leaf_fraction", c.explainer.cart.min_leaf_fraction);
      c.explainer.kernel_width = detail::optional_field<double>(e, "kernel_width");
      c.explainer.include_instance = e.value("include_instance", c.explainer.include_instance);
    }
    if (j.contains("explain")) {
      const auto& e = j.at("explain");
      detail::require_known_keys(e, "explain", {"instances", "count", "selection_seed"});
      c.explain.instances = e.value("instances", c.explain.instances);
      c.explain.count = e.value("count", c.explain.count);
      c.explain.selection_seed = e.value("selection_seed", c.explain.selection_seed);
    }
    if (j.contains("fidelity")) {
      const auto& f = j.at("fidelity");
      detail::require_known_keys(f, "fidelity", {"points", "n_grid", "seed", "threads"});
      c.fidelity.points = detail::optional_field<std::size_t>(f, "points");
      c.fidelity.n_grid = f.value("n_grid", c.fidelity.n_grid);
      c.fidelity.seed = f.value("seed", c.fidelity.seed);
      c.fidelity.threads = f.value("threads", c.fidelity.threads);
    }
    if (j.contains("stability")) {
      const auto& s = j.at("stability");
      detail::require_known_keys(s, "stability", {"instance", "selection_seed", "runs", "n_grid", "seed"});
      c.stability.instance = detail::optional_field<std::size_t>(s, "instance");
      c.stability.selection_seed = s.value("selection_seed", c.stability.selection_seed);
      c.stability.runs = s.value("runs", c.stability.runs);
      c.stability.n_grid = s.value("n_grid", c.stability.n_grid);
      c.stability.seed = s.value("seed", c.stability.seed);
    }
    if (j.contains("output_dir")) c.output_dir = resolve(j.at("output_dir").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("malformed config: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  return parse_config(read_json_file(path), path.parent_path());
}

// Sections each command depends on; their canonical JSON is the command's
// config hash. Dataset files enter through their content hashes so that the
// hash does not depend on where the files live.
inline json dataset_json(const DatasetSection& d) {
  return {{"csv_hash", hash_bytes(read_file(d.csv))},
          {"schema_hash", hash_bytes(read_file(d.schema))},
          {"train_fraction", d.train_fraction},
          {"split_seed", d.split_seed},
          {"subsample", detail::optional_json(d.subsample)},
          {"subsample_seed", d.subsample_seed}};
}

inline json blackbox_json(const BlackBoxSection& b) {
  json j = detail::train_to_json(b.train);
  j["hidden"] = {b.hidden[0], b.hidden[1]};
  j["grid_search"] = b.grid_search;
  j["neuron_range"] = b.neuron_range;
  j["cross_validate"] = b.cross_validate;
  j["folds"] = b.folds;
  j["selection"] = b.protocol == SelectionProtocol::validation ? "validation" : "paper-protocol";
  return j;
}

inline json autoencoder_json(const AutoencoderSection& a) {
  json j = detail::train_to_json(a.train);
  j["latent_dim"] = detail::optional_json(a.latent_dim);
  j["noise_std"] = a.noise_std;
  return j;
}

enum class Command { ingest, train_blackbox, train_ae, explain, fidelity, stability };

inline std::string to_string(Command c) {
  switch (c) {
    case Command::ingest: return "ingest";
    case Command::train_blackbox: return "train-blackbox";
    case Command::train_ae: return "train-ae";
    case Command::explain: return "explain";
    case Command::fidelity: return "fidelity";
    case Command::stability: return "stability";
  }
  return "ingest";
}

inline json command_config(const RunConfig& c, Command cmd) {
  json j = {{"dataset", dataset_json(c.dataset)}};
  if (cmd == Command::ingest) return j;
  if (cmd == Command::train_blackbox) {
    j["blackbox"] = blackbox_json(c.blackbox);
    return j;
  }
  if (cmd == Command::train_ae) {
    j["autoencoder"] = autoencoder_json(c.autoencoder);
    return j;
  }
  j["blackbox"] = blackbox_json(c.blackbox);
  j["autoencoder"] = autoencoder_json(c.autoencoder);
  j["explainer"] = c.explainer.to_json();
  // sweeps run alime and tree-alime together; explain leaves out instance selection
  if (cmd != Command::explain && c.explainer.method != Method::lime) j["explainer"]["method"] = "alime+tree-alime";
  if (cmd == Command::explain) return j;
  if (cmd == Command::fidelity) {
    // thread count does not affect results and is left out
    j["fidelity"] = {{"points", detail::optional_json(c.fidelity.points)},
                     {"n_grid", c.fidelity.n_grid},
                     {"seed", c.fidelity.seed}};
  } else {
    j["stability"] = {{"instance", detail::optional_json(c.stability.instance)},
                      {"selection_seed", c.stability.selection_seed},
                      {"runs", c.stability.runs},
                      {"n_grid", c.stability.n_grid},
                      {"seed", c.stability.seed}};
  }
  return j;
}

inline std::string config_hash(const RunConfig& c, Command cmd) { return hash_bytes(command_config(c, cmd).dump()); }

/// --seed: replaces the seed consumed by the command being run.
inline void apply_seed_override(RunConfig& c, Command cmd, std::uint64_t seed) {
  switch (cmd) {
    case Command::ingest: c.dataset.split_seed = seed; break;
    case Command::train_blackbox: c.blackbox.train.seed = seed; break;
    case Command::train_ae: c.autoencoder.train.seed = seed; break;
    case Command::explain: c.explainer.perturbation.seed = seed; break;
    case Command::fidelity: c.fidelity.seed = seed; break;
    case Command::stability: c.stability.seed = seed; break;
  }
}

// ---------------------------------------------------------------------------
// Artifact store

/// Holds an exclusive lock file in the output directory for its lifetime.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    require(f != nullptr, ErrorCode::io_error,
            "output directory " + dir.string() + " is locked by another process (remove " + path_.string() +
                " if no run is active)");
    std::fputs("locked\n", f);
    std::fclose(f);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
};

enum class WriteOutcome { written, verified };

class ArtifactStore {
 public:
  explicit ArtifactStore(fs::path root) : root_(std::move(root)) {
    for (const char* sub : {"data", "models", "explanations", "reports", "logs"}) fs::create_directories(root_ / sub);
    if (fs::exists(manifest_path())) manifest_ = read_json_file(manifest_path());
    if (!manifest_.contains("files")) manifest_["files"] = json::object();
  }

  const fs::path& root() const { return root_; }
  fs::path path(const std::string& rel) const { return root_ / rel; }
  fs::path manifest_path() const { return root_ / "manifest.json"; }
  const json& manifest() const { return manifest_; }

  bool has(const std::string& rel) const { return manifest_["files"].contains(rel); }

  /// First write records the file. A later write of the same file must come
  /// from the same config hash and carry identical bytes; the file on disk is
  /// then verified and left untouched.
  WriteOutcome write(const std::string& rel, const std::string& content, const std::string& command,
                     const std::string& cfg_hash) {
    const std::string content_hash = hash_bytes(content);
    auto& files = manifest_["files"];
    const fs::path target = root_ / rel;
    if (files.contains(rel)) {
      const auto& entry = files.at(rel);
      require(entry.at("config_hash").get<std::string>() == cfg_hash, ErrorCode::io_error,
              rel + " was produced by a different " + entry.at("command").get<std::string>() +
                  " config; use a fresh output directory");
      require(entry.at("content_hash").get<std::string>() == content_hash, ErrorCode::io_error,
              rel + ": rerun produced different bytes than the recorded artifact");
      require(fs::exists(target) && hash_bytes(read_file(target)) == content_hash, ErrorCode::io_error,
              rel + ": file on disk does not match its manifest hash");
      return WriteOutcome::verified;
    }
    require(!fs::exists(target), ErrorCode::io_error, rel + " exists but is not in the manifest; refusing to overwrite");
    fs::create_directories(target.parent_path());
    {
      std::ofstream out(target, std::ios::binary);
      require(out.good(), ErrorCode::io_error, "cannot write " + target.string());
      out << content;
      require(out.good(), ErrorCode::io_error, "write failed for " + target.string());
    }
    files[rel] = {{"content_hash", content_hash}, {"config_hash", cfg_hash}, {"command", command}};
    save_manifest();
    return WriteOutcome::written;
  }

  std::string read(const std::string& rel) const {
    require(has(rel), ErrorCode::missing_file, rel + " is not in " + manifest_path().string() + "; run the producing command first");
    const auto content = read_file(root_ / rel);
    require(hash_bytes(content) == manifest_["files"][rel].at("content_hash").get<std::string>(), ErrorCode::io_error,
            rel + " does not match its manifest hash");
    return content;
  }

  json read_json(const std::string& rel) const {
    try {
      return json::parse(read(rel));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::parse_error, rel + ": " + e.what());
    }
  }

 private:
  void save_manifest() const {
    const fs::path tmp = root_ / "manifest.json.tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      require(out.good(), ErrorCode::io_error, "cannot write manifest");
      out << dump(manifest_);
    }
    fs::rename(tmp, manifest_path());
  }

  fs::path root_;
  json manifest_ = json::object();
};

// ---------------------------------------------------------------------------
// Command context

struct CommandResult {
  std::vector<std::pair<std::string, WriteOutcome>> files;
  std::vector<std::string> log;  // human-readable summary lines

  std::size_t written() const {
    return static_cast<std::size_t>(std::count_if(files.begin(), files.end(), [](const auto& f) {
      return f.second == WriteOutcome::written;
    }));
  }
};

class Session {
 public:
  Session(const RunConfig& config, Command cmd)
      : config_(config), cmd_(cmd), lock_(config.output_dir), store_(config.output_dir),
        hash_(config_hash(config, cmd)) {}

  const RunConfig& config() const { return config_; }
  ArtifactStore& store() { return store_; }
  const std::string& hash() const { return hash_; }

  void emit(const std::string& rel, const std::string& content) {
    result_.files.emplace_back(rel, store_.write(rel, content, to_string(cmd_), hash_));
  }

  void log(const std::string& line) { result_.log.push_back(line); }

  /// Writes logs/<command>[-tag].log and returns the result.
  CommandResult finish(const std::string& tag = "") {
    std::ostringstream out;
    out << "command: " << to_string(cmd_) << "\nconfig_hash: " << hash_ << "\n";
    for (const auto& line : result_.log) out << line << "\n";
    out << "files:\n";
    for (const auto& f : result_.files) out << "  " << f.first << "\n";
    emit("logs/" + to_string(cmd_) + (tag.empty() ? "" : "-" + tag) + ".log", out.str());
    return result_;
  }

 private:
  RunConfig config_;
  Command cmd_;
  DirectoryLock lock_;
  ArtifactStore store_;
  std::string hash_;
  CommandResult result_;
};

// ---------------------------------------------------------------------------
// Ingested workspace

inline std::string matrix_csv(const EncodedDataset& ds) {
  std::ostringstream out;
  out << "row_id,label";
  for (const auto& name : ds.column_names) out << ',' << name;
  out << '\n';
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    out << ds.row_ids[r] << ',' << ds.labels[r];
    for (std::size_t c = 0; c < ds.cols(); ++c) {
      out << ',' << format_number(ds.matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)), 17);
    }
    out << '\n';
  }
  return out.str();
}

inline EncodedDataset parse_matrix_csv(const std::string& text, const FeatureSchema& schema) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::parse_error, "encoded matrix is empty");
  EncodedDataset ds;
  ds.column_map = encode_column_map(schema);
  ds.column_names = encoded_column_names(schema);
  require(alime::detail::split_csv_line(line).size() == ds.column_names.size() + 2, ErrorCode::parse_error,
          "encoded matrix header does not match the schema");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const char* p = line.c_str();
    char* end = nullptr;
    ds.row_ids.push_back(std::strtoull(p, &end, 10));
    p = end + 1;
    ds.labels.push_back(static_cast<int>(std::strtol(p, &end, 10)));
    std::vector<double> row(ds.column_names.size());
    for (auto& v : row) {
      require(*end == ',', ErrorCode::parse_error, "encoded matrix row too short");
      p = end + 1;
      v = std::strtod(p, &end);
    }
    rows.push_back(std::move(row));
  }
  ds.matrix.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.column_names.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      ds.matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return ds;
}

/// Everything downstream commands need from the ingest step.
struct Workspace {
  FeatureSchema schema;
  EncodedDataset raw;     // encoded, unscaled
  EncodedDataset scaled;  // encoded, standardized
  Scaler scaler;
  SplitIndices split;
  TrainingStats stats;

  EncodedDataset train() const { return scaled.subset(split.train); }
  EncodedDataset test() const { return scaled.subset(split.test); }
};

inline Workspace load_workspace(const ArtifactStore& store) {
  Workspace w;
  w.schema = FeatureSchema::from_json(store.read_json("data/schema.json"));
  w.raw = parse_matrix_csv(store.read("data/encoded.csv"), w.schema);
  w.scaler = Scaler::from_json(store.read_json("models/scaler.json"));
  const auto split = store.read_json("data/split.json");
  w.split.train = split.at("train").get<std::vector<std::size_t>>();
  w.split.test = split.at("test").get<std::vector<std::size_t>>();
  w.stats = TrainingStats::from_json(store.read_json("models/training_stats.json"));
  w.scaled = w.raw;
  w.scaled.matrix = apply_scaler(w.scaler, w.raw.matrix);
  return w;
}

// ---------------------------------------------------------------------------
// Commands

inline CommandResult cmd_ingest(const RunConfig& config) {
  Session s(config, Command::ingest);
  const auto schema = load_schema(config.dataset.schema);
  auto ds = load_csv(config.dataset.csv, schema);
  auto encoded = one_hot_encode(ds);
  if (config.dataset.subsample && *config.dataset.subsample < encoded.rows()) {
    auto keep = split_indices(encoded.rows(),
                              static_cast<double>(*config.dataset.subsample) / static_cast<double>(encoded.rows()),
                              config.dataset.subsample_seed)
                    .train;
    std::sort(keep.begin(), keep.end());
    encoded = encoded.subset(keep);
  }
  const auto scaler = fit_scaler(encoded.matrix);
  const auto split = split_indices(encoded.rows(), config.dataset.train_fraction, config.dataset.split_seed);
  const auto stats = compute_training_stats(select_rows(encoded.matrix, split.train), encoded.column_map);

  json imputation = json::object();
  for (std::size_t f = 0; f < schema.features.size(); ++f) imputation[schema.features[f].name] = ds.imputed[f];
  const json report = {{"rows", encoded.rows()},
                       {"source_rows", ds.size()},
                       {"features", schema.features.size()},
                       {"encoded_columns", encoded.cols()},
                       {"train_rows", split.train.size()},
                       {"test_rows", split.test.size()},
                       {"imputed_total", ds.total_imputed()},
                       {"imputed_per_feature", imputation},
                       {"constant_columns", std::count(scaler.constant.begin(), scaler.constant.end(), true)}};

  s.emit("data/schema.json", dump(schema.to_json()));
  s.emit("data/encoded.csv", matrix_csv(encoded));
  s.emit("data/split.json", dump({{"train", split.train}, {"test", split.test}, {"seed", config.dataset.split_seed}}));
  s.emit("models/scaler.json", dump(scaler.to_json()));
  s.emit("models/training_stats.json", dump(stats.to_json()));
  s.emit("reports/ingest.json", dump(report));
  s.log("rows: " + std::to_string(encoded.rows()) + ", encoded columns: " + std::to_string(encoded.cols()));
  s.log("train/test: " + std::to_string(split.train.size()) + "/" + std::to_string(split.test.size()));
  s.log("imputed cells: " + std::to_string(ds.total_imputed()));
  return s.finish();
}

inline CommandResult cmd_train_blackbox(const RunConfig& config) {
  Session s(config, Command::train_blackbox);
  const auto w = load_workspace(s.store());
  const auto train = w.train();
  const auto test = w.test();
  const auto& bb = config.blackbox;

  json report = {{"hidden", {bb.hidden[0], bb.hidden[1]}}};
  std::array<std::size_t, 2> hidden = bb.hidden;
  if (bb.grid_search) {
    const auto grid = grid_search_cv(train.matrix, train.labels, bb.neuron_range, bb.folds, bb.train, bb.protocol);
    hidden = grid.best_hidden;
    s.emit("reports/grid_search.json", dump(grid.to_json()));
    report["grid_search_mean_accuracy"] = grid.mean_accuracy;
    s.log("grid search: best " + std::to_string(hidden[0]) + "x" + std::to_string(hidden[1]) + ", mean accuracy " +
          format_number(grid.mean_accuracy, 4));
  } else if (bb.cross_validate) {
    const auto cv = cross_validate(train.matrix, train.labels, hidden, bb.folds, bb.train);
    report["cv_fold_accuracies"] = cv.fold_accuracies;
    report["cv_mean_accuracy"] = cv.mean_accuracy;
    s.log("cross-validation mean accuracy: " + format_number(cv.mean_accuracy, 4));
  }
  // Final model: 90% / 10% of the training split for fitting / early stopping.
  const auto inner = split_indices(train.rows(), 0.9, derive_seed(bb.train.seed, 0xB1AC));
  const auto model = mlp_train(select_rows(train.matrix, inner.train), select_items(train.labels, inner.train),
                               select_rows(train.matrix, inner.test), select_items(train.labels, inner.test), hidden,
                               bb.train);
  report["hidden"] = {hidden[0], hidden[1]};
  report["epochs"] = model.history.epochs();
  report["train_accuracy"] = model.accuracy(train.matrix, train.labels);
  report["test_accuracy"] = model.accuracy(test.matrix, test.labels);
  s.emit("models/blackbox.json", dump(model.to_json()));
  s.emit("reports/blackbox.json", dump(report));
  s.log("test accuracy: " + format_number(report["test_accuracy"].get<double>(), 4));
  return s.finish();
}

inline CommandResult cmd_train_ae(const RunConfig& config) {
  Session s(config, Command::train_ae);
  const auto w = load_workspace(s.store());
  const auto train = w.train();
  const auto& cfg = config.autoencoder;
  const std::size_t latent = cfg.latent_dim.value_or(DenoisingAutoencoder::default_latent(train.cols()));
  const auto ae = ae_train(train.matrix, cfg.train, latent, cfg.noise_std);

  std::ostringstream curve;
  curve << "epoch,train_loss,val_loss,best_val_loss\n";
  double best = std::numeric_limits<double>::infinity();
  bool monotone = true;
  double previous_best = best;
  for (std::size_t e = 0; e < ae.history.epochs(); ++e) {
    best = std::min(best, ae.history.val_loss[e]);
    monotone = monotone && best <= previous_best;
    previous_best = best;
    curve << e << ',' << format_number(ae.history.train_loss[e], 17) << ','
          << format_number(ae.history.val_loss[e], 17) << ',' << format_number(best, 17) << '\n';
  }
  const json report = {{"latent_dim", latent},
                       {"hidden", DenoisingAutoencoder::default_hidden(train.cols())},
                       {"noise_std", cfg.noise_std},
                       {"epochs", ae.history.epochs()},
                       {"best_epoch", ae.history.best_epoch},
                       {"best_val_loss", best},
                       {"best_so_far_monotone", monotone},
                       {"test_reconstruction_mse", ae.reconstruction_mse(w.test().matrix)}};
  s.emit("models/autoencoder.json", dump(ae.to_json()));
  s.emit("reports/autoencoder_loss.csv", curve.str());
  s.emit("reports/autoencoder.json", dump(report));
  s.log("latent " + std::to_string(latent) + ", best validation loss " + format_number(best, 6));
  return s.finish();
}

struct LoadedModels {
  Workspace workspace;
  std::shared_ptr<const MlpClassifier> blackbox;
  std::shared_ptr<const DenoisingAutoencoder> autoencoder;

  Explainer explainer() const {
    return Explainer(ModelContext{black_box_of(blackbox), autoencoder, workspace.scaler, workspace.stats,
                                  workspace.raw.column_names});
  }
};

inline LoadedModels load_models(const ArtifactStore& store, bool need_autoencoder) {
  LoadedModels m;
  m.workspace = load_workspace(store);
  m.blackbox = std::make_shared<const MlpClassifier>(MlpClassifier::from_json(store.read_json("models/blackbox.json")));
  if (need_autoencoder || store.has("models/autoencoder.json")) {
    m.autoencoder = std::make_shared<const DenoisingAutoencoder>(
        DenoisingAutoencoder::from_json(store.read_json("models/autoencoder.json")));
  }
  return m;
}

/// `count` distinct positions in [0, size), seeded.
inline std::vector<std::size_t> pick_positions(std::size_t size, std::size_t count, std::uint64_t seed) {
  require(count <= size, ErrorCode::index_error,
          "cannot pick " + std::to_string(count) + " of " + std::to_string(size) + " test rows");
  std::vector<std::size_t> order(size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  order.resize(count);
  return order;
}

inline CommandResult cmd_explain(const RunConfig& config, const std::vector<std::size_t>& instance_override = {}) {
  Session s(config, Command::explain);
  const auto models = load_models(s.store(), config.explainer.method != Method::lime);
  const auto test = models.workspace.test();
  auto positions = instance_override.empty() ? config.explain.instances : instance_override;
  if (positions.empty()) positions = pick_positions(test.rows(), config.explain.count, config.explain.selection_seed);
  for (auto p : positions) {
    require(p < test.rows(), ErrorCode::index_error,
            "instance " + std::to_string(p) + " out of range: test split has " + std::to_string(test.rows()) + " rows");
  }
  const auto explainer = models.explainer();
  const auto method = to_string(config.explainer.method);
  for (auto p : positions) {
    const RowVector x = test.matrix.row(static_cast<Eigen::Index>(p));
    const auto id = test.row_ids[p];
    const auto e = explainer.explain(x, id, config.explainer);
    const std::string stem = "explanations/" + method + "_" + std::to_string(id);
    json j = e.to_json();
    j["test_position"] = p;
    s.emit(stem + ".json", dump(j));
    s.emit(stem + ".txt", render_explanation(e));
    if (e.is_tree()) s.emit(stem + ".dot", to_dot(e.tree(), e.feature_names));
  }
  s.log(std::to_string(positions.size()) + " " + method + " explanations");
  std::string selection;
  for (auto p : positions) selection += std::to_string(p) + ",";
  return s.finish(method + "-" + hash_bytes(selection).substr(0, 8));
}

inline CommandResult cmd_fidelity(const RunConfig& config) {
  Session s(config, Command::fidelity);
  const auto models = load_models(s.store(), config.explainer.method != Method::lime);
  auto test = models.workspace.test();
  if (config.fidelity.points && *config.fidelity.points < test.rows()) {
    std::vector<std::size_t> first(*config.fidelity.points);
    std::iota(first.begin(), first.end(), std::size_t{0});
    test = test.subset(first);
  }
  const auto explainer = models.explainer();
  if (config.explainer.method == Method::lime) {
    std::ostringstream csv;
    csv << "n,lime_value\n";
    json rows = json::array();
    for (auto n : config.fidelity.n_grid) {
      ExplainerConfig cfg = config.explainer;
      cfg.perturbation.n = n;
      cfg.perturbation.m = std::max(cfg.perturbation.m, n);
      const auto entry = local_fidelity(explainer, cfg, test.matrix, test.row_ids, config.fidelity.seed, 0.5,
                                        config.fidelity.threads);
      csv << n << ',' << format_number(entry.accuracy, 17) << '\n';
      rows.push_back({{"n", n}, {"accuracy", entry.accuracy}, {"agreements", entry.agreements}, {"points", entry.points}});
    }
    s.emit("reports/fidelity_lime.csv", csv.str());
    s.emit("reports/fidelity_lime.json", dump({{"method", "lime"}, {"points", test.rows()}, {"sweep", rows}}));
  } else {
    const auto rows = fidelity_sweep(explainer, config.explainer, test.matrix, test.row_ids, config.fidelity.n_grid,
                                     config.fidelity.seed, 0.5, config.fidelity.threads);
    std::ostringstream csv;
    write_fidelity_csv(csv, rows);
    s.emit("reports/fidelity.csv", csv.str());
    s.emit("reports/fidelity.json", dump({{"methods", {"alime", "tree-alime"}},
                                          {"points", test.rows()},
                                          {"instance_ids", test.row_ids},
                                          {"sweep", to_json(rows)}}));
    for (const auto& r : rows) {
      s.log("n=" + std::to_string(r.n) + " linear " + format_number(r.linear.accuracy, 4) + " tree " +
            format_number(r.tree.accuracy, 4));
    }
  }
  return s.finish(config.explainer.method == Method::lime ? "lime" : "");
}

inline CommandResult cmd_stability(const RunConfig& config) {
  Session s(config, Command::stability);
  const auto models = load_models(s.store(), true);
  const auto test = models.workspace.test();
  const std::size_t position =
      config.stability.instance.value_or(pick_positions(test.rows(), 1, config.stability.selection_seed).front());
  require(position < test.rows(), ErrorCode::index_error,
          "stability instance " + std::to_string(position) + " out of range: test split has " +
              std::to_string(test.rows()) + " rows");
  const RowVector x = test.matrix.row(static_cast<Eigen::Index>(position));
  const auto id = test.row_ids[position];
  const auto rows = stability_sweep(models.explainer(), x, id, config.explainer, config.stability.n_grid,
                                    config.stability.runs, config.stability.seed);
  std::ostringstream csv;
  write_stability_csv(csv, rows);
  s.emit("reports/stability.csv", csv.str());
  s.emit("reports/stability.json",
         dump({{"instance_id", id}, {"test_position", position}, {"runs", config.stability.runs}, {"sweep", to_json(rows)}}));
  double lin = 0.0, tree = 0.0;
  for (const auto& r : rows) {
    lin += r.linear.mean_feature_count;
    tree += r.tree.mean_feature_count;
  }
  s.log("instance " + std::to_string(id) + ": mean features linear " +
        format_number(lin / static_cast<double>(rows.size()), 4) + ", tree " +
        format_number(tree / static_cast<double>(rows.size()), 4));
  return s.finish();
}

// ---------------------------------------------------------------------------
// Exit-code mapping

inline bool is_input_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::missing_column:
    case ErrorCode::unknown_category:
    case ErrorCode::non_binary_label:
    case ErrorCode::degenerate_split:
    case ErrorCode::invalid_argument:
    case ErrorCode::missing_file:
    case ErrorCode::io_error:
    case ErrorCode::parse_error:
    case ErrorCode::index_error:
    case ErrorCode::grid_exceeds_pool:
    case ErrorCode::too_few_runs:
      return true;
    default:
      return false;
  }
}

inline int exit_code_for(Command cmd, ErrorCode code) {
  if (is_input_error(code)) return exit_input;
  switch (cmd) {
    case Command::ingest: return exit_input;
    case Command::train_blackbox:
    case Command::train_ae: return exit_training;
    default: return exit_evaluation;
  }
}

struct Invocation {
  Command command = Command::ingest;
  fs::path config_path;
  std::optional<fs::path> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::vector<std::size_t> instances;
};

inline RunConfig effective_config(const Invocation& inv) {
  auto config = load_config(inv.config_path);
  if (inv.out) config.output_dir = *inv.out;
  if (inv.method) config.explainer.method = method_from_string(*inv.method);
  if (inv.seed) apply_seed_override(config, inv.command, *inv.seed);
  config.validate();
  return config;
}

inline CommandResult dispatch(const Invocation& inv) {
  const auto config = effective_config(inv);
  switch (inv.command) {
    case Command::ingest: return cmd_ingest(config);
    case Command::train_blackbox: return cmd_train_blackbox(config);
    case Command::train_ae: return cmd_train_ae(config);
    case Command::explain: return cmd_explain(config, inv.instances);
    case Command::fidelity: return cmd_fidelity(config);
    case Command::stability: return cmd_stability(config);
  }
  throw Error(ErrorCode::invalid_argument, "unknown command");
}

/// Runs one invocation and reports on the given streams; returns the exit code.
inline int run(const Invocation& inv, std::ostream& out, std::ostream& err) {
  try {
    const auto result = dispatch(inv);
    for (const auto& line : result.log) out << line << "\n";
    for (const auto& [file, outcome] : result.files) {
      out << (outcome == WriteOutcome::written ? "wrote    " : "verified ") << file << "\n";
    }
    return exit_ok;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(inv.command, e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return inv.command == Command::train_blackbox || inv.command == Command::train_ae ? exit_training
                                                                                      : exit_evaluation;
  }
}

}  // namespace alime::cli
