#include "selrank/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace selrank {

const std::map<std::string, std::string>& Config::defaults() {
  static const std::map<std::string, std::string> kDefaults = {
      // paths
      {"corpus", ""},
      {"index", ""},
      {"queries", ""},
      {"qrels", ""},
      {"embeddings", ""},
      {"checkpoint", ""},
      {"selector_checkpoint", ""},
      {"run_in", ""},
      {"run_out", ""},
      {"checkpoint_out", ""},
      {"selector_checkpoint_out", ""},
      {"log_out", ""},
      {"report_out", ""},
      {"cdf_out", ""},
      {"qid", ""},
      {"docid", ""},
      // selection / training regime
      {"selector", "auto"},
      {"mode", "auto"},
      {"k", "20"},
      {"temperature", "1.0"},
      {"margin", "0.2"},
      {"ranker_lr", "1e-3"},
      {"selector_lr", "1e-3"},
      {"weight_decay", "0.01"},
      {"batch_size", "8"},
      {"warmup", "100"},
      {"epochs", "10"},
      {"triples_per_query", "8"},
      {"selector_epochs", "5"},
      {"seed", "42"},
      {"val_fraction", "0.2"},
      {"head_limit", "0"},
      {"st_weight", "khot"},
      // ranker architecture
      {"max_len", "128"},
      {"model_dim", "64"},
      {"layers", "2"},
      {"heads", "4"},
      {"ff_dim", "128"},
      {"dropout", "0.1"},
      // selector architecture
      {"selector_hidden", "32"},
      {"selector_embed_dim", "64"},
      {"att_dim", "32"},
      {"shared_affine", "true"},
      // retrieval & evaluation
      {"depth", "100"},
      {"k1", "1.2"},
      {"b", "0.75"},
      {"run_tag", "selrank"},
      {"cutoffs", "10,20"},
      {"gain", "linear"},
      {"head_budget", "-1"},
  };
  return kDefaults;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw std::runtime_error("config line " + std::to_string(line_no) +
                                 ": expected key = value");
      continue;
    }
    auto strip = [](std::string s) {
      const size_t b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const size_t e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    const std::string key = strip(line.substr(0, eq));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": empty key");
    out[key] = strip(line.substr(eq + 1));
  }
  return out;
}

Config Config::resolve(const std::string& path,
                       const std::map<std::string, std::string>& flags) {
  Config config;
  config.values_ = defaults();
  auto apply = [&](const std::map<std::string, std::string>& layer,
                   const char* origin) {
    for (const auto& [key, value] : layer) {
      auto it = config.values_.find(key);
      if (it == config.values_.end())
        throw std::runtime_error(std::string("unknown ") + origin + " key: " + key);
      it->second = value;
    }
  };
  if (!path.empty()) apply(read_config_file(path), "config");
  apply(flags, "flag");
  return config;
}

const std::string& Config::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown config key: " + key);
  return it->second;
}

double Config::num(const std::string& key) const {
  const std::string& v = str(key);
  size_t used = 0;
  const double out = std::stod(v, &used);
  if (used != v.size())
    throw std::invalid_argument("config key " + key + ": not a number: " + v);
  return out;
}

std::int64_t Config::integer(const std::string& key) const {
  const std::string& v = str(key);
  size_t used = 0;
  const std::int64_t out = std::stoll(v, &used);
  if (used != v.size())
    throw std::invalid_argument("config key " + key + ": not an integer: " + v);
  return out;
}

bool Config::boolean(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config key " + key + ": not a boolean: " + v);
}

std::optional<int> Config::optional_int(const std::string& key) const {
  const std::int64_t v = integer(key);
  if (v <= 0) return std::nullopt;
  return static_cast<int>(v);
}

std::string Config::render() const {
  std::ostringstream os;
  for (const auto& [key, value] : values_) os << key << "=" << value << "\n";
  return os.str();
}

}  // namespace selrank
