#include "evtact/config.hpp"

#include <set>

#include "evtact/common.hpp"

using nlohmann::json;

namespace evt {

namespace {

// Tracks which keys a parser consumed so leftovers can be reported with
// their full JSON path.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError(path_ + ": expected a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  void get_enum(const char* key, std::string& out) { get(key, out); }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string layout_name(ChannelLayout l) {
  return l == ChannelLayout::TwoChannel ? "two_channel" : "three_channel";
}

ChannelLayout layout_from_name(const std::string& s, const std::string& path) {
  if (s == "two_channel") return ChannelLayout::TwoChannel;
  if (s == "three_channel") return ChannelLayout::ThreeChannel;
  throw ConfigError(path + ": unknown channel layout '" + s + "'");
}

std::string normalization_name(Normalization n) {
  return n == Normalization::None ? "none" : "clamp_k";
}

Normalization normalization_from_name(const std::string& s,
                                      const std::string& path) {
  if (s == "none") return Normalization::None;
  if (s == "clamp_k") return Normalization::ClampK;
  throw ConfigError(path + ": unknown normalization '" + s + "'");
}

}  // namespace

json encoder_config_to_json(const EncoderConfig& c) {
  return json{{"rho_usec", c.rho_usec},
              {"spatial_size", c.spatial_size},
              {"channel_layout", layout_name(c.channel_layout)},
              {"normalization", normalization_name(c.normalization)},
              {"clamp_k", c.clamp_k}};
}

EncoderConfig encoder_config_from_json(const json& j, const std::string& path) {
  EncoderConfig c;
  Fields f(j, path);
  f.get("rho_usec", c.rho_usec);
  f.get("spatial_size", c.spatial_size);
  std::string layout = layout_name(c.channel_layout);
  f.get_enum("channel_layout", layout);
  c.channel_layout = layout_from_name(layout, path + ".channel_layout");
  std::string norm = normalization_name(c.normalization);
  f.get_enum("normalization", norm);
  c.normalization = normalization_from_name(norm, path + ".normalization");
  f.get("clamp_k", c.clamp_k);
  f.finish();
  return c;
}

json augment_config_to_json(const AugmentConfig& c) {
  return json{{"drop_prob", c.drop_prob},
              {"rho_choices", c.rho_choices},
              {"crop_scale_lo", c.crop_scale_lo},
              {"crop_scale_hi", c.crop_scale_hi},
              {"hflip_prob", c.hflip_prob},
              {"seed", c.seed}};
}

AugmentConfig augment_config_from_json(const json& j, const std::string& path) {
  AugmentConfig c;
  Fields f(j, path);
  f.get("drop_prob", c.drop_prob);
  f.get("rho_choices", c.rho_choices);
  f.get("crop_scale_lo", c.crop_scale_lo);
  f.get("crop_scale_hi", c.crop_scale_hi);
  f.get("hflip_prob", c.hflip_prob);
  f.get("seed", c.seed);
  f.finish();
  return c;
}

json model_config_to_json(const ModelConfig& c) {
  return json{{"image_size", c.image_size},
              {"patch_size", c.patch_size},
              {"in_channels", c.in_channels},
              {"embed_dim", c.embed_dim},
              {"spatial_depth", c.spatial_depth},
              {"spatial_heads", c.spatial_heads},
              {"temporal_layers", c.temporal_layers},
              {"temporal_heads", c.temporal_heads},
              {"attention_window", c.attention_window},
              {"clip_len", c.clip_len},
              {"num_classes", c.num_classes},
              {"proj_hidden", c.proj_hidden},
              {"proj_dim", c.proj_dim},
              {"dropout", c.dropout}};
}

ModelConfig model_config_from_json(const json& j, const std::string& path) {
  ModelConfig c;
  Fields f(j, path);
  f.get("image_size", c.image_size);
  f.get("patch_size", c.patch_size);
  f.get("in_channels", c.in_channels);
  f.get("embed_dim", c.embed_dim);
  f.get("spatial_depth", c.spatial_depth);
  f.get("spatial_heads", c.spatial_heads);
  f.get("temporal_layers", c.temporal_layers);
  f.get("temporal_heads", c.temporal_heads);
  f.get("attention_window", c.attention_window);
  f.get("clip_len", c.clip_len);
  f.get("num_classes", c.num_classes);
  f.get("proj_hidden", c.proj_hidden);
  f.get("proj_dim", c.proj_dim);
  f.get("dropout", c.dropout);
  f.finish();
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"warmup_epochs", c.warmup_epochs},
              {"base_lr", c.base_lr},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"batch_size", c.batch_size},
              {"alpha", c.alpha},
              {"tau", c.tau},
              {"symmetric_ec", c.symmetric_ec},
              {"ce_both_views", c.ce_both_views},
              {"seed", c.seed},
              {"clip_len", c.clip_len},
              {"augment", augment_config_to_json(c.augment)},
              {"encoder", encoder_config_to_json(c.encoder)}};
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
  TrainConfig c;
  Fields f(j, path);
  f.get("epochs", c.epochs);
  f.get("warmup_epochs", c.warmup_epochs);
  f.get("base_lr", c.base_lr);
  f.get("adam_beta1", c.adam_beta1);
  f.get("adam_beta2", c.adam_beta2);
  f.get("adam_eps", c.adam_eps);
  f.get("batch_size", c.batch_size);
  f.get("alpha", c.alpha);
  f.get("tau", c.tau);
  f.get("symmetric_ec", c.symmetric_ec);
  f.get("ce_both_views", c.ce_both_views);
  f.get("seed", c.seed);
  f.get("clip_len", c.clip_len);
  if (const json* a = f.sub("augment"))
    c.augment = augment_config_from_json(*a, path + ".augment");
  if (const json* e = f.sub("encoder"))
    c.encoder = encoder_config_from_json(*e, path + ".encoder");
  f.finish();
  return c;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (train.clip_len != model.clip_len)
    throw ConfigError("train.clip_len " + std::to_string(train.clip_len) +
                      " does not match model.clip_len " +
                      std::to_string(model.clip_len));
  if (train.encoder.spatial_size != model.image_size)
    throw ConfigError("train.encoder.spatial_size " +
                      std::to_string(train.encoder.spatial_size) +
                      " does not match model.image_size " +
                      std::to_string(model.image_size));
  if (train.encoder.channels() != model.in_channels)
    throw ConfigError("train.encoder yields " +
                      std::to_string(train.encoder.channels()) +
                      " channels, model.in_channels is " +
                      std::to_string(model.in_channels));
  if (eval_clips < 1) throw ConfigError("eval_clips must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

RunConfig run_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  Fields f(j, "config");
  if (const json* m = f.sub("model"))
    c.model = model_config_from_json(*m, "config.model");
  if (const json* t = f.sub("train"))
    c.train = train_config_from_json(*t, "config.train");
  f.get("train_manifest", c.train_manifest);
  f.get("test_manifest", c.test_manifest);
  f.get("output_dir", c.output_dir);
  f.get("eval_clips", c.eval_clips);
  f.finish();
  return c;
}

std::string run_config_to_json_text(const RunConfig& cfg) {
  json j{{"model", model_config_to_json(cfg.model)},
         {"train", train_config_to_json(cfg.train)},
         {"train_manifest", cfg.train_manifest},
         {"test_manifest", cfg.test_manifest},
         {"output_dir", cfg.output_dir},
         {"eval_clips", cfg.eval_clips}};
  return j.dump(2) + "\n";
}

RunConfig load_run_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  try {
    return run_config_from_json_text(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void save_run_config(const std::string& path, const RunConfig& cfg) {
  write_file(path, run_config_to_json_text(cfg));
}

}  // namespace evt
