#include "ecgssl/config.hpp"

#include <json.hpp>

#include "ecgssl/io.hpp"

namespace ecgssl {

using nlohmann::json;

namespace {

std::string window_name(WindowKind k) {
  switch (k) {
    case WindowKind::kHann: return "hann";
    case WindowKind::kGaussian: return "gaussian";
    case WindowKind::kRectangular: return "rectangular";
  }
  return "hann";
}

WindowKind window_from_name(const std::string& s) {
  if (s == "hann") return WindowKind::kHann;
  if (s == "gaussian") return WindowKind::kGaussian;
  if (s == "rectangular") return WindowKind::kRectangular;
  throw ConfigError("unknown window kind: " + s);
}

json stages_to_json(const std::vector<StageSpec>& stages) {
  json a = json::array();
  for (const auto& s : stages) a.push_back({s.channels, s.blocks, s.stride});
  return a;
}

std::vector<StageSpec> stages_from_json(const json& a) {
  std::vector<StageSpec> out;
  for (const auto& e : a) {
    if (!e.is_array() || e.size() != 3)
      throw ConfigError("encoder stage must be [channels, blocks, stride]");
    out.push_back({e[0].get<int64_t>(), e[1].get<int>(), e[2].get<int>()});
  }
  return out;
}

}  // namespace

RunConfig RunConfig::defaults() { return RunConfig{}; }

std::string RunConfig::to_json_text() const {
  json j;
  j["seed"] = seed;
  j["folds"] = folds;
  j["variant"] = variant;
  j["dataset_dir"] = dataset_dir;
  j["out_dir"] = out_dir;
  j["reward_csv"] = reward_csv;
  j["normal_class"] = normal_class;
  j["synth"] = {{"n_records", synth.n_records},
                {"n_active_classes", synth.n_active_classes},
                {"fs", synth.fs},
                {"duration_s", synth.duration_s},
                {"noise_sigma", synth.noise_sigma},
                {"p_second_label", synth.p_second_label}};
  j["stft"] = {{"window_len", stft.window_len},
               {"hop", stft.hop},
               {"window", window_name(stft.window_kind)},
               {"gaussian_sigma", stft.gaussian_sigma},
               {"log_epsilon", stft.log_epsilon}};
  j["augment"] = {{"sigma", augment.sigma},
                  {"cutout_alpha_max", augment.cutout_alpha_max},
                  {"global_crop", {augment.global_crop_lo, augment.global_crop_hi}},
                  {"local_crop", {augment.local_crop_lo, augment.local_crop_hi}},
                  {"n_local_views", augment.n_local_views},
                  {"enable_time_cutout", augment.enable_time_cutout},
                  {"enable_noise", augment.enable_noise},
                  {"enable_freq_cutout", augment.enable_freq_cutout}};
  j["encoder1"] = {{"stages", stages_to_json(encoder1.stages)},
                   {"stem_channels", encoder1.stem_channels},
                   {"stem_kernel", encoder1.stem_kernel},
                   {"block_kernel", encoder1.block_kernel},
                   {"stem_pool", encoder1.stem_pool},
                   {"feature_dim", encoder1.feature_dim},
                   {"input_channels", encoder1.input_channels},
                   {"input_length", encoder1.input_length}};
  j["encoder2"] = {{"stages", stages_to_json(encoder2.stages)},
                   {"stem_channels", encoder2.stem_channels},
                   {"block_kernel", encoder2.block_kernel},
                   {"se_reduction", encoder2.se_reduction},
                   {"feature_dim", encoder2.feature_dim},
                   {"input_channels", encoder2.input_channels},
                   {"input_frames", encoder2.input_frames}};
  j["selfkd"] = {{"prototypes", selfkd.prototypes},
                 {"tau_student", selfkd.tau_student},
                 {"tau_teacher", selfkd.tau_teacher},
                 {"ema_lambda", selfkd.ema_lambda},
                 {"center_momentum", selfkd.center_momentum},
                 {"centering", selfkd.centering},
                 {"steps", selfkd.steps},
                 {"batch_size", selfkd.batch_size},
                 {"lr", selfkd.lr}};
  j["head"] = {{"hidden", head.hidden}};
  j["finetune"] = {{"steps", ft.steps},
                   {"batch_size", ft.batch_size},
                   {"lr", ft.lr},
                   {"threshold", ft.threshold},
                   {"classifier_hidden", ft.classifier_hidden},
                   {"gate_hidden", ft.gate_hidden},
                   {"crop", {ft.crop_lo, ft.crop_hi}}};
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.folds = j.value("folds", c.folds);
    c.variant = j.value("variant", c.variant);
    c.dataset_dir = j.value("dataset_dir", c.dataset_dir);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.reward_csv = j.value("reward_csv", c.reward_csv);
    c.normal_class = j.value("normal_class", c.normal_class);
    if (j.contains("synth")) {
      const json& s = j["synth"];
      c.synth.n_records = s.value("n_records", c.synth.n_records);
      c.synth.n_active_classes = s.value("n_active_classes", c.synth.n_active_classes);
      c.synth.fs = s.value("fs", c.synth.fs);
      c.synth.duration_s = s.value("duration_s", c.synth.duration_s);
      c.synth.noise_sigma = s.value("noise_sigma", c.synth.noise_sigma);
      c.synth.p_second_label = s.value("p_second_label", c.synth.p_second_label);
    }
    if (j.contains("stft")) {
      const json& s = j["stft"];
      c.stft.window_len = s.value("window_len", c.stft.window_len);
      c.stft.hop = s.value("hop", c.stft.hop);
      if (s.contains("window"))
        c.stft.window_kind = window_from_name(s["window"].get<std::string>());
      c.stft.gaussian_sigma = s.value("gaussian_sigma", c.stft.gaussian_sigma);
      c.stft.log_epsilon = s.value("log_epsilon", c.stft.log_epsilon);
    }
    if (j.contains("augment")) {
      const json& a = j["augment"];
      c.augment.sigma = a.value("sigma", c.augment.sigma);
      c.augment.cutout_alpha_max = a.value("cutout_alpha_max", c.augment.cutout_alpha_max);
      if (a.contains("global_crop")) {
        c.augment.global_crop_lo = a["global_crop"][0].get<real>();
        c.augment.global_crop_hi = a["global_crop"][1].get<real>();
      }
      if (a.contains("local_crop")) {
        c.augment.local_crop_lo = a["local_crop"][0].get<real>();
        c.augment.local_crop_hi = a["local_crop"][1].get<real>();
      }
      c.augment.n_local_views = a.value("n_local_views", c.augment.n_local_views);
      c.augment.enable_time_cutout =
          a.value("enable_time_cutout", c.augment.enable_time_cutout);
      c.augment.enable_noise = a.value("enable_noise", c.augment.enable_noise);
      c.augment.enable_freq_cutout =
          a.value("enable_freq_cutout", c.augment.enable_freq_cutout);
    }
    auto parse_encoder = [&](const char* key, EncoderConfig& e, bool is_2d) {
      if (!j.contains(key)) return;
      const json& s = j[key];
      if (s.contains("stages")) e.stages = stages_from_json(s["stages"]);
      e.stem_channels = s.value("stem_channels", e.stem_channels);
      e.stem_kernel = s.value("stem_kernel", e.stem_kernel);
      e.block_kernel = s.value("block_kernel", e.block_kernel);
      e.stem_pool = s.value("stem_pool", e.stem_pool);
      e.feature_dim = s.value("feature_dim", e.feature_dim);
      e.input_channels = s.value("input_channels", e.input_channels);
      if (is_2d) {
        e.se_reduction = s.value("se_reduction", e.se_reduction);
        e.input_frames = s.value("input_frames", e.input_frames);
      } else {
        e.input_length = s.value("input_length", e.input_length);
      }
    };
    parse_encoder("encoder1", c.encoder1, false);
    parse_encoder("encoder2", c.encoder2, true);
    if (j.contains("selfkd")) {
      const json& s = j["selfkd"];
      c.selfkd.prototypes = s.value("prototypes", c.selfkd.prototypes);
      c.selfkd.tau_student = s.value("tau_student", c.selfkd.tau_student);
      c.selfkd.tau_teacher = s.value("tau_teacher", c.selfkd.tau_teacher);
      c.selfkd.ema_lambda = s.value("ema_lambda", c.selfkd.ema_lambda);
      c.selfkd.center_momentum = s.value("center_momentum", c.selfkd.center_momentum);
      c.selfkd.centering = s.value("centering", c.selfkd.centering);
      c.selfkd.steps = s.value("steps", c.selfkd.steps);
      c.selfkd.batch_size = s.value("batch_size", c.selfkd.batch_size);
      c.selfkd.lr = s.value("lr", c.selfkd.lr);
    }
    if (j.contains("head")) {
      const json& s = j["head"];
      if (s.contains("hidden"))
        c.head.hidden = s["hidden"].get<std::vector<int64_t>>();
    }
    if (j.contains("finetune")) {
      const json& s = j["finetune"];
      c.ft.steps = s.value("steps", c.ft.steps);
      c.ft.batch_size = s.value("batch_size", c.ft.batch_size);
      c.ft.lr = s.value("lr", c.ft.lr);
      c.ft.threshold = s.value("threshold", c.ft.threshold);
      c.ft.classifier_hidden = s.value("classifier_hidden", c.ft.classifier_hidden);
      c.ft.gate_hidden = s.value("gate_hidden", c.ft.gate_hidden);
      if (s.contains("crop")) {
        c.ft.crop_lo = s["crop"][0].get<real>();
        c.ft.crop_hi = s["crop"][1].get<real>();
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  return from_json_text(read_file(path));
}

PretrainConfig RunConfig::pretrain_config(Modality modality) const {
  PretrainConfig p;
  p.kd = selfkd;
  p.augment = augment;
  p.head = head;
  p.head.prototypes = selfkd.prototypes;
  p.stft = stft;
  p.seed = seed;
  if (modality == Modality::kTime) {
    p.encoder = encoder1;
    p.augment.output_len = encoder1.input_length;
  } else {
    p.encoder = encoder2;
    p.encoder.input_freq = stft.window_len / 2 + 1;
    p.augment.output_len = encoder2.input_frames;
  }
  return p;
}

FinetuneConfig RunConfig::finetune_config(Variant v) const {
  FinetuneConfig f;
  f.variant = v;
  f.encoder1 = encoder1;
  f.encoder2 = encoder2;
  f.encoder2.input_freq = stft.window_len / 2 + 1;
  f.stft = stft;
  f.crop_lo = ft.crop_lo;
  f.crop_hi = ft.crop_hi;
  f.n_classes = EcgRecord::kClasses;
  f.steps = ft.steps;
  f.batch_size = ft.batch_size;
  f.lr = ft.lr;
  f.threshold = ft.threshold;
  f.classifier_hidden = ft.classifier_hidden;
  f.gate_hidden = ft.gate_hidden;
  f.seed = seed;
  return f;
}

RewardMatrix RunConfig::reward_matrix(
    const std::filesystem::path& dataset_dir_override) const {
  if (!reward_csv.empty()) return load_reward_csv(reward_csv, normal_class);
  const std::filesystem::path base =
      dataset_dir_override.empty() ? std::filesystem::path(dataset_dir)
                                   : dataset_dir_override;
  if (!base.empty() && std::filesystem::exists(base / "reward.csv"))
    return load_reward_csv(base / "reward.csv", normal_class);
  RewardMatrix rw = RewardMatrix::synthetic_default(EcgRecord::kClasses);
  auto it = std::find(rw.classes.begin(), rw.classes.end(), normal_class);
  if (it == rw.classes.end())
    throw ConfigError("normal class " + normal_class + " not in default matrix");
  rw.normal_index = it - rw.classes.begin();
  return rw;
}

}  // namespace ecgssl
