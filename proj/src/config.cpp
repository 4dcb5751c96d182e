#include "facecond/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <variant>

#include "facecond/errors.hpp"

namespace facecond {

namespace {

using Field = std::variant<int Config::*, double Config::*, bool Config::*, std::uint64_t Config::*>;

struct Entry {
  const char* key;
  Field field;
  bool architecture;
};

#define FC_ENTRY(name, arch) Entry{#name, &Config::name, arch}

const std::vector<Entry>& table() {
  static const std::vector<Entry> entries = {
      FC_ENTRY(d, true),
      FC_ENTRY(layers, true),
      FC_ENTRY(d_t, true),
      FC_ENTRY(c1, true),
      FC_ENTRY(heads, true),
      FC_ENTRY(perceiver_depth, true),
      FC_ENTRY(face_tokens, true),
      FC_ENTRY(n_txt, true),
      FC_ENTRY(patch, true),
      FC_ENTRY(frame_h, true),
      FC_ENTRY(frame_w, true),
      FC_ENTRY(frames, true),
      FC_ENTRY(ffn_mult, true),
      FC_ENTRY(mod_hidden, true),
      FC_ENTRY(T, true),
      FC_ENTRY(beta_start, true),
      FC_ENTRY(beta_end, true),
      FC_ENTRY(lr, false),
      FC_ENTRY(lr_base, false),
      FC_ENTRY(lr_min_ratio, false),
      FC_ENTRY(weight_decay, false),
      FC_ENTRY(adam_beta1, false),
      FC_ENTRY(adam_beta2, false),
      FC_ENTRY(adam_eps, false),
      FC_ENTRY(steps_base, false),
      FC_ENTRY(steps_image, false),
      FC_ENTRY(steps_video, false),
      FC_ENTRY(batch_base, false),
      FC_ENTRY(batch_image, false),
      FC_ENTRY(batch_video, false),
      FC_ENTRY(lambda_id, false),
      FC_ENTRY(face_mask_prob, false),
      FC_ENTRY(n_ids, false),
      FC_ENTRY(per_id, false),
      FC_ENTRY(video_n_ids, false),
      FC_ENTRY(video_per_id, false),
      FC_ENTRY(max_angle, false),
      FC_ENTRY(max_shift, false),
      FC_ENTRY(scale_min, false),
      FC_ENTRY(scale_max, false),
      FC_ENTRY(filter_threshold, false),
      FC_ENTRY(theta_id, false),
      FC_ENTRY(theta_motion, false),
      FC_ENTRY(eval_samples, false),
      FC_ENTRY(sample_steps, false),
      FC_ENTRY(seed, false),
      FC_ENTRY(disable_can, false),
      FC_ENTRY(disable_id_branch, false),
      FC_ENTRY(disable_face_branch, false),
      FC_ENTRY(direct_can_prediction, false),
      FC_ENTRY(skip_pretrain, false),
  };
  return entries;
}

#undef FC_ENTRY

const Entry& find(const std::string& key) {
  for (const Entry& e : table()) {
    if (key == e.key) return e;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace

void Config::set(const std::string& key, const std::string& raw) {
  const Entry& e = find(key);
  const std::string value = trim(raw);
  std::visit(
      [&](auto member) {
        using M = std::remove_reference_t<decltype(this->*member)>;
        if constexpr (std::is_same_v<M, bool>) {
          if (value == "1" || value == "true") {
            this->*member = true;
          } else if (value == "0" || value == "false") {
            this->*member = false;
          } else {
            throw ConfigError("config key '" + key + "' expects a boolean, got '" + value + "'");
          }
        } else if constexpr (std::is_same_v<M, double>) {
          char* end = nullptr;
          const double v = std::strtod(value.c_str(), &end);
          if (value.empty() || end != value.c_str() + value.size()) {
            throw ConfigError("config key '" + key + "' expects a number, got '" + value + "'");
          }
          this->*member = v;
        } else {
          M v{};
          const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
          if (ec != std::errc() || ptr != value.data() + value.size()) {
            throw ConfigError("config key '" + key + "' expects an integer, got '" + value + "'");
          }
          this->*member = v;
        }
      },
      e.field);
}

std::string Config::get(const std::string& key) const {
  const Entry& e = find(key);
  return std::visit(
      [&](auto member) -> std::string {
        using M = std::remove_cvref_t<decltype(this->*member)>;
        if constexpr (std::is_same_v<M, bool>) {
          return (this->*member) ? "true" : "false";
        } else if constexpr (std::is_same_v<M, double>) {
          return format_double(this->*member);
        } else {
          return std::to_string(this->*member);
        }
      },
      e.field);
}

const std::vector<std::string>& Config::keys() {
  static const std::vector<std::string> ks = [] {
    std::vector<std::string> out;
    for (const Entry& e : table()) out.emplace_back(e.key);
    return out;
  }();
  return ks;
}

std::string Config::to_text() const {
  std::string out;
  for (const Entry& e : table()) out += std::string(e.key) + " = " + get(e.key) + "\n";
  return out;
}

Config Config::from_text(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void Config::apply_env_overrides() {
  if (const char* s = std::getenv("FACECOND_SEED")) set("seed", s);
}

std::uint64_t Config::architecture_hash() const {
  std::string s;
  for (const Entry& e : table()) {
    if (e.architecture) s += std::string(e.key) + "=" + get(e.key) + ";";
  }
  return fnv1a(s);
}

std::uint64_t Config::full_hash() const { return fnv1a(to_text()); }

void Config::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("config: ") + name + " must be positive");
  };
  positive(d, "d");
  positive(layers, "layers");
  positive(d_t, "d_t");
  positive(c1, "c1");
  positive(perceiver_depth, "perceiver_depth");
  positive(face_tokens, "face_tokens");
  positive(n_txt, "n_txt");
  positive(patch, "patch");
  positive(frame_h, "frame_h");
  positive(frame_w, "frame_w");
  positive(frames, "frames");
  positive(ffn_mult, "ffn_mult");
  positive(mod_hidden, "mod_hidden");
  positive(T, "T");
  positive(batch_base, "batch_base");
  positive(batch_image, "batch_image");
  positive(batch_video, "batch_video");
  positive(n_ids, "n_ids");
  positive(per_id, "per_id");
  if (heads != 1) throw ConfigError("config: only single-head attention is implemented (heads = 1)");
  if (d < 2) throw ConfigError("config: d must be at least 2");
  if (frame_h % patch != 0 || frame_w % patch != 0) {
    throw ConfigError("config: frame dimensions must be divisible by patch");
  }
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    throw ConfigError("config: need 0 < beta_start <= beta_end < 1");
  }
  if (steps_base < 0 || steps_image < 0 || steps_video < 0) throw ConfigError("config: step counts must be >= 0");
  if (lr < 0.0 || lr_base < 0.0) throw ConfigError("config: learning rates must be >= 0");
  if (lambda_id < 0.0) throw ConfigError("config: lambda_id must be >= 0");
  if (face_mask_prob < 0.0 || face_mask_prob > 1.0) throw ConfigError("config: face_mask_prob must be in [0, 1]");
  if (!(filter_threshold > -1.0 && filter_threshold < 1.0)) {
    throw ConfigError("config: filter_threshold must be in (-1, 1)");
  }
  if (max_angle < 0.0 || max_angle > 0.5) throw ConfigError("config: max_angle must be in [0, 0.5]");
  if (max_shift < 0.0 || max_shift > 0.2) throw ConfigError("config: max_shift must be in [0, 0.2]");
  if (scale_min < 0.8 || scale_max > 1.25 || scale_min > scale_max) {
    throw ConfigError("config: scale range must lie in [0.8, 1.25]");
  }
}

}  // namespace facecond
