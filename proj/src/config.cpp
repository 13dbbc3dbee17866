#include "disco/config.hpp"

#include "disco/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

namespace disco {

namespace {

using Setter = std::function<void(Config&, const std::string&)>;
using Getter = std::function<std::string(const Config&)>;

struct Field {
  std::string key;
  Setter set;
  Getter get;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& v) {
  double out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out)) throw std::invalid_argument("expected a number, got '" + v + "'");
  return out;
}

long long to_int(const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw std::invalid_argument("expected an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("expected on/off, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(to_int(trim(item))));
  if (out.empty()) throw std::invalid_argument("expected a comma-separated list");
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <typename T>
Field num(std::string key, T Config::*part, double T::*member) {
  return {std::move(key), [=](Config& c, const std::string& v) { (c.*part).*member = to_double(v); },
          [=](const Config& c) { return fmt((c.*part).*member); }};
}

template <typename T, typename I>
Field integer(std::string key, T Config::*part, I T::*member) {
  return {std::move(key), [=](Config& c, const std::string& v) { (c.*part).*member = static_cast<I>(to_int(v)); },
          [=](const Config& c) { return std::to_string((c.*part).*member); }};
}

// Integer member of a nested struct inside the model config.
template <typename Sub, typename I>
Field nested(std::string key, Sub CodecConfig::*sub, I Sub::*member) {
  return {std::move(key),
          [=](Config& c, const std::string& v) { ((c.model).*sub).*member = static_cast<I>(to_int(v)); },
          [=](const Config& c) { return std::to_string(((c.model).*sub).*member); }};
}

void transformer_fields(std::vector<Field>& f, const std::string& name, TransformerConfig CodecConfig::*sub) {
  f.push_back(nested(name + ".layers", sub, &TransformerConfig::n_layers));
  f.push_back(nested(name + ".heads", sub, &TransformerConfig::n_heads));
  f.push_back(nested(name + ".d_model", sub, &TransformerConfig::d_model));
  f.push_back(nested(name + ".d_ffn", sub, &TransformerConfig::d_ffn));
  f.push_back(nested(name + ".window", sub, &TransformerConfig::window));
}

template <typename E>
Field choice(std::string key, E CodecConfig::*member, std::vector<std::pair<std::string, E>> names) {
  return {std::move(key),
          [=](Config& c, const std::string& v) {
            for (const auto& [n, e] : names)
              if (n == v) {
                c.model.*member = e;
                return;
              }
            std::string opts;
            for (const auto& [n, e] : names) opts += (opts.empty() ? "" : "|") + n;
            throw std::invalid_argument("expected one of " + opts + ", got '" + v + "'");
          },
          [=](const Config& c) {
            for (const auto& [n, e] : names)
              if (e == c.model.*member) return n;
            return std::string("?");
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"model.token_rate",
                 [](Config& c, const std::string& v) {
                   const double r = to_double(v);
                   if (r != 12.5 && r != 25.0) throw std::invalid_argument("must be 12.5 or 25, got " + v);
                   c.model.token_rate = r;
                 },
                 [](const Config& c) { return fmt(c.model.token_rate); }});
    f.push_back(integer("model.ssl_dim", &Config::model, &CodecConfig::ssl_dim));
    transformer_fields(f, "model.content", &CodecConfig::content);
    transformer_fields(f, "model.token_module", &CodecConfig::token_module);
    transformer_fields(f, "model.mel_module", &CodecConfig::mel_module);
    transformer_fields(f, "model.feature_decoder", &CodecConfig::feature_decoder);
    f.push_back(nested("model.global.blocks", &CodecConfig::global, &GlobalConfig::n_blocks));
    f.push_back(nested("model.global.width", &CodecConfig::global, &GlobalConfig::width));
    f.push_back(nested("model.global.embed_dim", &CodecConfig::global, &GlobalConfig::embed_dim));
    f.push_back(nested("model.global.kernel", &CodecConfig::global, &GlobalConfig::kernel));
    f.push_back(nested("model.global.expansion", &CodecConfig::global, &GlobalConfig::expansion));
    f.push_back(nested("model.global.pool_hidden", &CodecConfig::global, &GlobalConfig::pool_hidden));
    f.push_back(nested("model.postnet.layers", &CodecConfig::postnet, &PostnetConfig::layers));
    f.push_back(nested("model.postnet.kernel", &CodecConfig::postnet, &PostnetConfig::kernel));
    f.push_back(nested("model.postnet.channels", &CodecConfig::postnet, &PostnetConfig::channels));
    f.push_back({"model.fsq_levels", [](Config& c, const std::string& v) { c.model.fsq.levels = to_int_list(v); },
                 [](const Config& c) { return fmt_list(c.model.fsq.levels); }});
    f.push_back(choice("model.quantizer", &CodecConfig::quantizer,
                       {{"fsq", QuantizerKind::Fsq}, {"vq_ema", QuantizerKind::VqEma}}));
    f.push_back(nested("model.vq.codebook_size", &CodecConfig::vq, &VqEmaConfig::codebook_size));
    f.push_back({"model.vq.decay", [](Config& c, const std::string& v) { c.model.vq.decay = to_double(v); },
                 [](const Config& c) { return fmt(c.model.vq.decay); }});
    f.push_back(nested("model.vq.restart_threshold", &CodecConfig::vq, &VqEmaConfig::restart_threshold));
    f.push_back({"model.vq.commitment", [](Config& c, const std::string& v) { c.model.vq.commitment = to_double(v); },
                 [](const Config& c) { return fmt(c.model.vq.commitment); }});
    f.push_back(nested("model.vq.kmeans_iters", &CodecConfig::vq, &VqEmaConfig::kmeans_iters));
    f.push_back(nested("model.mel.n_mels", &CodecConfig::mel, &MelConfig::n_mels));
    f.push_back(integer("model.vq_dim", &Config::model, &CodecConfig::vq_dim));
    f.push_back({"model.content_layers",
                 [](Config& c, const std::string& v) { c.model.content_layers = to_int_list(v); },
                 [](const Config& c) { return fmt_list(c.model.content_layers); }});
    f.push_back({"model.global_layers", [](Config& c, const std::string& v) { c.model.global_layers = to_int_list(v); },
                 [](const Config& c) { return fmt_list(c.model.global_layers); }});
    f.push_back({"model.global_branch", [](Config& c, const std::string& v) { c.model.global_on = to_bool(v); },
                 [](const Config& c) { return std::string(c.model.global_on ? "on" : "off"); }});
    f.push_back({"model.ssl_loss", [](Config& c, const std::string& v) { c.model.ssl_loss_on = to_bool(v); },
                 [](const Config& c) { return std::string(c.model.ssl_loss_on ? "on" : "off"); }});
    f.push_back(choice("model.pooling", &CodecConfig::pooling,
                       {{"attentive", Pooling::Attentive}, {"average", Pooling::Average}}));
    f.push_back(choice("model.conditioning", &CodecConfig::conditioning,
                       {{"mel_module", Conditioning::MelModule},
                        {"full_decoder", Conditioning::FullDecoder},
                        {"addition", Conditioning::Addition}}));

    f.push_back(num("train.alpha", &Config::train, &TrainConfig::alpha));
    f.push_back(num("train.beta", &Config::train, &TrainConfig::beta));
    f.push_back(num("train.gamma", &Config::train, &TrainConfig::gamma));
    f.push_back(num("train.peak_lr", &Config::train, &TrainConfig::peak_lr));
    f.push_back(num("train.warmup_frac", &Config::train, &TrainConfig::warmup_frac));
    f.push_back(num("train.post_lr", &Config::train, &TrainConfig::post_lr));
    f.push_back(num("train.beta1", &Config::train, &TrainConfig::beta1));
    f.push_back(num("train.beta2", &Config::train, &TrainConfig::beta2));
    f.push_back(num("train.weight_decay", &Config::train, &TrainConfig::weight_decay));
    f.push_back(num("train.adam_eps", &Config::train, &TrainConfig::adam_eps));
    f.push_back(num("train.grad_clip", &Config::train, &TrainConfig::grad_clip));
    f.push_back(integer("train.steps", &Config::train, &TrainConfig::steps));
    f.push_back(integer("train.batch", &Config::train, &TrainConfig::batch));
    f.push_back(num("train.segment_seconds", &Config::train, &TrainConfig::segment_seconds));
    f.push_back({"train.mode", [](Config& c, const std::string& v) { c.train.mode = parse_train_mode(v); },
                 [](const Config& c) { return std::string(to_string(c.train.mode)); }});
    f.push_back(integer("train.seed", &Config::train, &TrainConfig::seed));
    f.push_back(integer("train.disc_bands", &Config::train, &TrainConfig::disc_bands));
    f.push_back(integer("train.disc_layers", &Config::train, &TrainConfig::disc_layers));
    f.push_back(integer("train.disc_channels", &Config::train, &TrainConfig::disc_channels));

    f.push_back(integer("features.seed", &Config::ssl, &SslConfig::seed));
    f.push_back(integer("features.n_mels", &Config::ssl, &SslConfig::n_mels));
    f.push_back(integer("features.n_fft", &Config::ssl, &SslConfig::n_fft));
    f.push_back(integer("features.shallow_below", &Config::ssl, &SslConfig::shallow_below));
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

void finish(Config& c, const std::string& origin) {
  c.ssl.dims = c.model.ssl_dim;
  try {
    c.model.validate();
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

struct Line {
  int number;
  std::string key, value;
};

}  // namespace

Config preset_config(const std::string& name, double token_rate) {
  Config c;
  c.preset = name;
  if (name == "paper") {
    c.model = CodecConfig::paper(token_rate);
    c.train = TrainConfig::paper();
  } else if (name == "desk") {
    c.model = CodecConfig::desk(token_rate);
    c.train = TrainConfig::desk();
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected paper or desk)");
  }
  c.ssl.dims = c.model.ssl_dim;
  return c;
}

Config parse_config(std::string_view text, const std::string& origin) {
  std::vector<Line> lines;
  std::string section, preset = "desk";
  double rate = 12.5;
  std::istringstream in{std::string(text)};
  std::string raw;
  int number = 0;
  while (std::getline(in, raw)) {
    ++number;
    const auto hash = raw.find_first_of("#;");
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(number);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError(where + ": malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section != "model" && section != "train" && section != "features")
        throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError(where + ": expected key = value");
    const std::string full = section.empty() ? key : section + "." + key;
    if (full == "preset") {
      preset = value;
      continue;
    }
    if (!find_field(full)) throw ConfigError(where + ": unknown key '" + full + "'");
    if (full == "model.token_rate") {
      try {
        rate = to_double(value);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": model.token_rate: " + e.what());
      }
    }
    lines.push_back({number, full, value});
  }
  if (rate != 12.5 && rate != 25.0) {
    for (const auto& l : lines)
      if (l.key == "model.token_rate")
        throw ConfigError(origin + ":" + std::to_string(l.number) + ": model.token_rate: must be 12.5 or 25, got " +
                          l.value);
  }
  Config c = preset_config(preset, rate);
  for (const auto& l : lines) {
    try {
      find_field(l.key)->set(c, l.value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(origin + ":" + std::to_string(l.number) + ": " + l.key + ": " + e.what());
    }
  }
  finish(c, origin);
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, path.string());
}

void apply_override(Config& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown key '" + key + "'");
  try {
    f->set(cfg, value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
  finish(cfg, key);
}

std::string render_config(const Config& cfg) {
  std::string out = "preset = " + cfg.preset + "\n";
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace disco
