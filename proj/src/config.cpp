#include "spats/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "spats/sha256.hpp"

namespace fs = std::filesystem;

namespace spats {

const char* kToolVersion = "spats 0.1.0";

KvMap read_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  KvMap kv;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key = value");
    auto trim = [](std::string s) {
      const char* ws = " \t\r";
      s.erase(0, s.find_first_not_of(ws));
      auto end = s.find_last_not_of(ws);
      s.erase(end == std::string::npos ? 0 : end + 1);
      return s;
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

namespace {

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for " + key + ": '" + v + "'");
  }
}

int to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  return int(d);
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ','))
    out.push_back(to_double(key, tok));
  return out;
}

}  // namespace

void apply_train_config(const KvMap& kv, TrainConfig* cfg) {
  for (const auto& [key, val] : kv) {
    if (key == "total_iters") cfg->total_iters = to_int(key, val);
    else if (key == "batch_size") cfg->batch_size = to_int(key, val);
    else if (key == "lr0") cfg->lr0 = to_double(key, val);
    else if (key == "lr_milestones") cfg->lr_milestones = to_list(key, val);
    else if (key == "adam_beta1") cfg->adam_beta1 = to_double(key, val);
    else if (key == "adam_beta2") cfg->adam_beta2 = to_double(key, val);
    else if (key == "adam_eps") cfg->adam_eps = to_double(key, val);
    else if (key == "color_warmup_fraction")
      cfg->color_warmup_fraction = to_double(key, val);
    else if (key == "seed") cfg->seed = uint64_t(to_double(key, val));
    else if (key == "n_control") cfg->model.n_control = to_int(key, val);
    else if (key == "enc_freqs_spatial")
      cfg->model.enc_freqs_spatial = to_int(key, val);
    else if (key == "enc_freqs_time") cfg->model.enc_freqs_time = to_int(key, val);
    else if (key == "enc_include_raw")
      cfg->model.enc_include_raw = to_int(key, val) != 0;
    else if (key == "mlp_layers") cfg->model.mlp_layers = to_int(key, val);
    else if (key == "mlp_width") cfg->model.mlp_width = to_int(key, val);
    else if (key == "mlp_skip") cfg->model.mlp_skip = to_int(key, val);
    else if (key == "lambda_fl") cfg->weights.lambda_fl = to_double(key, val);
    else if (key == "lambda_ds") cfg->weights.lambda_ds = to_double(key, val);
    else if (key == "lambda_dc") cfg->weights.lambda_dc = to_double(key, val);
    else if (key == "lambda_bound")
      cfg->weights.lambda_bound = to_double(key, val);
    else if (key == "lambda_reg") cfg->weights.lambda_reg = to_double(key, val);
    else if (key == "lambda_mxe") cfg->weights.lambda_mxe = to_double(key, val);
    else if (key == "flow_mode") cfg->flow_mode = parse_flow_mode(val);
    else if (key == "mask_k") cfg->mask_k = to_double(key, val);
    else if (key == "mask_erode_px") cfg->mask_erode_px = to_double(key, val);
    else if (key == "cycle_thresh_px")
      cfg->cycle_thresh_px = to_double(key, val);
    else if (key == "log_every") cfg->log_every = to_int(key, val);
    else if (key == "eval_every") cfg->eval_every = to_int(key, val);
    else if (key == "checkpoint_every")
      cfg->checkpoint_every = to_int(key, val);
    else
      throw ConfigError("unknown config key: " + key);
  }
}

std::string train_config_to_kv(const TrainConfig& cfg) {
  std::ostringstream out;
  out << "total_iters = " << cfg.total_iters << '\n'
      << "batch_size = " << cfg.batch_size << '\n'
      << "lr0 = " << cfg.lr0 << '\n';
  out << "lr_milestones = ";
  for (size_t i = 0; i < cfg.lr_milestones.size(); ++i)
    out << (i ? "," : "") << cfg.lr_milestones[i];
  out << '\n';
  out << "adam_beta1 = " << cfg.adam_beta1 << '\n'
      << "adam_beta2 = " << cfg.adam_beta2 << '\n'
      << "adam_eps = " << cfg.adam_eps << '\n'
      << "color_warmup_fraction = " << cfg.color_warmup_fraction << '\n'
      << "seed = " << cfg.seed << '\n'
      << "n_control = " << cfg.model.n_control << '\n'
      << "enc_freqs_spatial = " << cfg.model.enc_freqs_spatial << '\n'
      << "enc_freqs_time = " << cfg.model.enc_freqs_time << '\n'
      << "enc_include_raw = " << (cfg.model.enc_include_raw ? 1 : 0) << '\n'
      << "mlp_layers = " << cfg.model.mlp_layers << '\n'
      << "mlp_width = " << cfg.model.mlp_width << '\n'
      << "mlp_skip = " << cfg.model.mlp_skip << '\n'
      << "lambda_fl = " << cfg.weights.lambda_fl << '\n'
      << "lambda_ds = " << cfg.weights.lambda_ds << '\n'
      << "lambda_dc = " << cfg.weights.lambda_dc << '\n'
      << "lambda_bound = " << cfg.weights.lambda_bound << '\n'
      << "lambda_reg = " << cfg.weights.lambda_reg << '\n'
      << "lambda_mxe = " << cfg.weights.lambda_mxe << '\n'
      << "flow_mode = "
      << (cfg.flow_mode == FlowLossMode::canonical ? "canonical"
                                                   : "paper-literal")
      << '\n'
      << "mask_k = " << cfg.mask_k << '\n'
      << "mask_erode_px = " << cfg.mask_erode_px << '\n'
      << "cycle_thresh_px = " << cfg.cycle_thresh_px << '\n'
      << "log_every = " << cfg.log_every << '\n'
      << "eval_every = " << cfg.eval_every << '\n'
      << "checkpoint_every = " << cfg.checkpoint_every << '\n';
  return out.str();
}

RunManifest make_manifest(const TrainConfig& cfg,
                          const std::vector<std::string>& input_paths) {
  RunManifest m;
  m.tool_version = kToolVersion;
  m.seed = cfg.seed;
  m.config_snapshot = train_config_to_kv(cfg);
  std::string all;
  for (const std::string& p : input_paths) {
    if (!fs::exists(p)) continue;
    std::vector<std::string> files;
    if (fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file()) files.push_back(e.path().string());
      std::sort(files.begin(), files.end());
    } else {
      files.push_back(p);
    }
    for (const std::string& f : files) {
      const std::string digest = sha256_file_hex(f);
      m.inputs.emplace_back(f, digest);
      all += digest;
    }
  }
  all += m.config_snapshot;
  m.combined_hash = sha256_hex(all.data(), all.size());
  return m;
}

void write_manifest(const std::string& path, const RunManifest& m) {
  nlohmann::json j;
  j["tool_version"] = m.tool_version;
  j["seed"] = m.seed;
  j["combined_hash"] = m.combined_hash;
  j["inputs"] = nlohmann::json::array();
  for (const auto& [p, digest] : m.inputs)
    j["inputs"].push_back({{"path", p}, {"sha256", digest}});
  j["config"] = m.config_snapshot;
  std::ofstream f(path);
  if (!f) throw DataError("cannot write manifest " + path);
  f << j.dump(2) << '\n';
}

}  // namespace spats
