#include "freetrain/config.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace freetrain {

namespace {

template <class... Parts>
std::string cat(const Parts&... parts) {
  std::ostringstream out;
  (out << ... << parts);
  return out.str();
}

void expect(bool ok, const std::string& msg) {
  if (!ok) throw TensorError(msg);
}

std::string trim(const std::string& s) {
  const std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Entry {
  std::string value;
  mutable bool used = false;
};

constexpr const char* kSections[] = {"model", "data",    "train",
                                     "eval",  "surface", "output"};

/// Raw sectioned key/value view plus strict typed getters. Every get marks
/// the key used; leftover keys are reported as unknown.
class RawConfig {
 public:
  RawConfig(const std::string& text, std::string origin)
      : origin_(std::move(origin)) {
    std::istringstream in(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      if (line.front() == '[' && line.back() == ']') {
        section = trim(line.substr(1, line.size() - 2));
        bool known = false;
        for (const char* s : kSections) known = known || section == s;
        expect(known, cat(origin_, ":", line_no, ": unknown section [",
                          section, "]"));
        continue;
      }
      const std::size_t eq = line.find('=');
      expect(eq != std::string::npos,
             cat(origin_, ":", line_no, ": expected key = value, got '", line,
                 "'"));
      const std::string key = trim(line.substr(0, eq));
      expect(!key.empty(), cat(origin_, ":", line_no, ": expected key = value"));
      expect(!section.empty(), cat(origin_, ":", line_no, ": key '", key,
                                   "' appears before any [section] header"));
      sections_[section][key] = Entry{trim(line.substr(eq + 1))};
    }
  }

  bool has(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  std::string str(const std::string& section, const std::string& key,
                  const std::string& fallback) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return fallback;
    auto k = s->second.find(key);
    if (k == s->second.end()) return fallback;
    k->second.used = true;
    return k->second.value;
  }

  double number(const std::string& section, const std::string& key,
                double fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = str(section, key, "");
    char* end = nullptr;
    const double parsed = std::strtod(v.c_str(), &end);
    expect(end == v.c_str() + v.size() && !v.empty(),
           cat(origin_, ": ", section, ".", key, ": expected a number, got '",
               v, "'"));
    return parsed;
  }

  std::size_t count(const std::string& section, const std::string& key,
                    std::size_t fallback) const {
    const double v = number(section, key, double(fallback));
    expect(v >= 0 && v == std::size_t(v),
           cat(origin_, ": ", section, ".", key,
               ": expected a non-negative integer"));
    return std::size_t(v);
  }

  int integer(const std::string& section, const std::string& key,
              int fallback) const {
    const double v = number(section, key, double(fallback));
    expect(v == int(v), cat(origin_, ": ", section, ".", key,
                            ": expected an integer"));
    return int(v);
  }

  bool flag(const std::string& section, const std::string& key,
            bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string v = str(section, key, "");
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw TensorError(cat(origin_, ": ", section, ".", key,
                          ": expected true or false, got '", v, "'"));
  }

  std::vector<std::size_t> count_list(const std::string& section,
                                      const std::string& key) const {
    std::vector<std::size_t> out;
    for (const std::string& item : split(str(section, key, ""), ',')) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(item.c_str(), &end, 10);
      expect(end == item.c_str() + item.size(),
             cat(origin_, ": ", section, ".", key,
                 ": expected a comma-separated integer list, got '", item,
                 "'"));
      out.push_back(std::size_t(v));
    }
    return out;
  }

  std::vector<std::string> str_list(const std::string& section,
                                    const std::string& key) const {
    return split(str(section, key, ""), ',');
  }

  void reject_unknown_keys() const {
    for (const auto& [section, entries] : sections_)
      for (const auto& [key, entry] : entries)
        expect(entry.used,
               cat(origin_, ": unknown key ", section, ".", key));
  }

  const std::string& origin() const { return origin_; }

 private:
  std::string origin_;
  std::map<std::string, std::map<std::string, Entry>> sections_;
};

std::vector<std::size_t> parse_input_shape(const std::string& text,
                                           const std::string& origin) {
  std::vector<std::size_t> dims;
  for (const std::string& item : split(text, 'x')) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(item.c_str(), &end, 10);
    expect(end == item.c_str() + item.size() && v > 0,
           cat(origin, ": model.input: expected dims like 784 or 1x28x28, "
               "got '", text, "'"));
    dims.push_back(std::size_t(v));
  }
  expect(!dims.empty(), cat(origin, ": model.input: empty shape"));
  return dims;
}

DirectionKind parse_direction(const std::string& v, const std::string& origin,
                              const std::string& key) {
  if (v == "adversarial") return DirectionKind::Adversarial;
  if (v == "rademacher") return DirectionKind::Rademacher;
  throw TensorError(cat(origin, ": ", key,
                        ": expected adversarial or rademacher, got '", v, "'"));
}

float attack_arg(const std::map<std::string, std::string>& args,
                 const std::string& attack, const std::string& key,
                 float fallback) {
  auto it = args.find(key);
  if (it == args.end()) return fallback;
  char* end = nullptr;
  const float v = std::strtof(it->second.c_str(), &end);
  expect(end == it->second.c_str() + it->second.size() &&
             !it->second.empty(),
         cat("attack ", attack, ": ", key, ": expected a number, got '",
             it->second, "'"));
  return v;
}

}  // namespace

std::vector<NamedAttack> parse_attacks(const std::string& text,
                                       float default_eps) {
  std::vector<NamedAttack> out;
  std::istringstream in(text);
  std::string token;
  while (in >> token) {
    std::string name = token;
    std::map<std::string, std::string> args;
    const std::size_t paren = token.find('(');
    if (paren != std::string::npos) {
      expect(token.back() == ')',
             cat("attack ", token, ": expected name(args)"));
      name = token.substr(0, paren);
      for (const std::string& pair :
           split(token.substr(paren + 1, token.size() - paren - 2), ',')) {
        const std::size_t eq = pair.find('=');
        expect(eq != std::string::npos,
               cat("attack ", name, ": expected key=value, got '", pair, "'"));
        args[trim(pair.substr(0, eq))] = trim(pair.substr(eq + 1));
      }
    }

    auto allow = [&](std::initializer_list<const char*> keys) {
      for (const auto& kv : args) {
        bool ok = false;
        for (const char* k : keys) ok = ok || kv.first == k;
        expect(ok, cat("attack ", name, ": unknown argument '", kv.first, "'"));
      }
    };
    auto required_k = [&] {
      expect(args.count("k") > 0, cat("attack ", name, ": missing k"));
      const float k = attack_arg(args, name, "k", 0.0f);
      expect(k >= 1 && k == int(k),
             cat("attack ", name, ": k: expected a positive integer"));
      return int(k);
    };

    NamedAttack a;
    a.name = name;
    a.config.eps = attack_arg(args, name, "eps", default_eps);
    if (name == "fgsm") {
      allow({"eps"});
      a.config.steps = 1;
      a.config.eps_step = a.config.eps;
      a.config.random_init = false;
    } else if (name == "pgd" || name == "cw") {
      allow({"k", "eps", "eps_step", "restarts"});
      a.config.steps = required_k();
      a.config.eps_step = attack_arg(args, name, "eps_step", a.config.eps / 4);
      a.config.random_init = true;
      const float r = attack_arg(args, name, "restarts", 1.0f);
      expect(r >= 1 && r == int(r),
             cat("attack ", name, ": restarts: expected a positive integer"));
      a.config.restarts = int(r);
      if (name == "cw") a.config.loss_kind = LossKind::CwMargin;
    } else if (name == "bim") {
      allow({"k", "eps", "eps_step"});
      a.config.steps = required_k();
      a.config.eps_step = attack_arg(args, name, "eps_step", a.config.eps / 4);
      a.config.random_init = false;
    } else {
      throw TensorError(cat("attack ", name,
                            ": unknown attack (fgsm, pgd, bim, cw)"));
    }
    out.push_back(std::move(a));
  }
  return out;
}

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin) {
  RawConfig raw(text, origin);
  ExperimentConfig cfg;

  // Missing required keys are reported after the whole file is read, so a
  // malformed value or an unknown key is named ahead of an absent one.
  std::vector<std::string> missing;
  auto required = [&](const char* section, const char* key,
                      const char* placeholder) {
    if (!raw.has(section, key)) {
      missing.push_back(cat(section, ".", key));
      return std::string(placeholder);
    }
    return raw.str(section, key, "");
  };

  const std::string kind = required("model", "kind", "mlp");
  if (kind == "mlp") cfg.model.kind = ModelKind::Mlp;
  else if (kind == "convnet") cfg.model.kind = ModelKind::Convnet;
  else throw TensorError(cat(origin, ": model.kind: expected mlp or convnet, "
                             "got '", kind, "'"));
  cfg.model.input_shape = parse_input_shape(required("model", "input", "1"), origin);
  cfg.model.classes = raw.count("model", "classes", 10);
  cfg.model.hidden = raw.count_list("model", "hidden");
  cfg.model.conv_channels = raw.count_list("model", "conv_channels");
  cfg.model.kernel = raw.integer("model", "kernel", 3);
  cfg.model.padding = raw.integer("model", "padding", 1);
  cfg.model.pool_window = raw.integer("model", "pool_window", 2);
  cfg.model.input_scale = float(raw.number("model", "input_scale", 1.0));

  cfg.data.source = required("data", "source", "synth_digits");
  cfg.data.data_seed = raw.count("data", "data_seed", 5);
  cfg.data.train_per_class = raw.count("data", "train_per_class", 100);
  cfg.data.eval_per_class = raw.count("data", "eval_per_class", 50);
  cfg.data.digit_noise_sigma = float(raw.number("data", "noise_sigma", 10.0));
  cfg.data.digit_brightness_lo =
      float(raw.number("data", "brightness_lo", 0.85));
  cfg.data.digit_max_shift = raw.integer("data", "max_shift", 3);
  cfg.data.blob_classes = raw.count("data", "blob_classes", 2);
  cfg.data.blob_dims = raw.count("data", "blob_dims", 8);
  cfg.data.blob_separation = float(raw.number("data", "blob_separation", 6.0));
  cfg.data.train_images = raw.str("data", "train_images", "");
  cfg.data.train_labels = raw.str("data", "train_labels", "");
  cfg.data.eval_images = raw.str("data", "eval_images", "");
  cfg.data.eval_labels = raw.str("data", "eval_labels", "");
  cfg.data.train_files = raw.str_list("data", "train_files");
  cfg.data.eval_files = raw.str_list("data", "eval_files");

  const std::string regime = required("train", "regime", "natural");
  if (regime == "natural") cfg.train.regime = Regime::Natural;
  else if (regime == "kpgd") cfg.train.regime = Regime::Kpgd;
  else if (regime == "free") cfg.train.regime = Regime::Free;
  else throw TensorError(cat(origin, ": train.regime: expected natural, kpgd "
                             "or free, got '", regime, "'"));
  cfg.train.replay_m = raw.count("train", "m", 1);
  cfg.train.attack_steps = raw.integer("train", "k", 7);
  cfg.train.eps = float(raw.number("train", "eps", 0.0));
  cfg.train.eps_step = float(raw.number("train", "eps_step", 0.0));
  cfg.train.attack_random_init = raw.flag("train", "random_init", true);
  cfg.train.epochs = raw.count("train", "epochs", 1);
  cfg.train.batch_size = raw.count("train", "batch_size", 32);
  cfg.train.lr = float(raw.number("train", "lr", 0.01));
  cfg.train.lr_decay = raw.flag("train", "lr_decay", false);
  cfg.train.momentum = float(raw.number("train", "momentum", 0.9));
  cfg.train.weight_decay = float(raw.number("train", "weight_decay", 5e-4));
  cfg.train.seed = raw.count("train", "seed", 0);

  cfg.eval.attacks = parse_attacks(raw.str("eval", "attacks", ""), cfg.train.eps);
  cfg.eval.eval_n = raw.count("eval", "eval_n", 0);
  cfg.eval.batch_size = raw.count("eval", "batch_size", 200);
  cfg.eval.seed = raw.count("eval", "seed", 9);

  cfg.surface.examples = raw.count("surface", "examples", 0);
  cfg.surface.grid_n = raw.count("surface", "grid_n", 11);
  cfg.surface.extent = float(raw.number("surface", "extent", 0.0));
  cfg.surface.dir_a = parse_direction(raw.str("surface", "dir_a", "adversarial"),
                                      origin, "surface.dir_a");
  cfg.surface.dir_b = parse_direction(raw.str("surface", "dir_b", "rademacher"),
                                      origin, "surface.dir_b");
  cfg.surface.seed = raw.count("surface", "seed", 33);

  cfg.out_dir = raw.str("output", "dir", "run_out");

  raw.reject_unknown_keys();
  expect(missing.empty(),
         cat(origin, ": missing required key ",
             missing.empty() ? "" : missing.front()));
  return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  expect(f.good(), cat("config ", path, ": cannot open"));
  const std::string text((std::istreambuf_iterator<char>(f)),
                         std::istreambuf_iterator<char>());
  return parse_config_text(text, path);
}

}  // namespace freetrain
