#include "reseg/config.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace reseg {

namespace {
using nlohmann::json;
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

// Wraps one JSON object and refuses to finish while any key is unvisited, so
// configs with typos fail instead of silently using defaults.
class Strict {
 public:
  Strict(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error("config: expected object at " + path_);
  }

  template <typename T>
  void get(const char* key, T& target) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      target = j_[key].get<T>();
    } catch (const json::exception&) {
      throw Error("config: bad value type at " + path_ + "." + key);
    }
  }

  template <typename T, std::size_t N>
  void get_array(const char* key, std::array<T, N>& target) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const auto& a = j_[key];
    if (!a.is_array() || a.size() != N)
      throw Error("config: " + path_ + "." + key + " must be an array of " + std::to_string(N));
    for (std::size_t i = 0; i < N; ++i) {
      try {
        target[i] = a[i].get<T>();
      } catch (const json::exception&) {
        throw Error("config: bad value type at " + path_ + "." + key);
      }
    }
  }

  const json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_[key];
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.contains(it.key()))
        throw Error("config: unknown key '" + it.key() + "' at " + path_);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json shape_json(const Shape3& s) { return json{s[0], s[1], s[2]}; }
json spacing_json(const Spacing3& s) { return json{s[0], s[1], s[2]}; }

std::string backend_name(ConvBackend b) { return b == ConvBackend::direct ? "direct" : "fft"; }
ConvBackend backend_from(const std::string& s) {
  if (s == "direct") return ConvBackend::direct;
  if (s == "fft") return ConvBackend::fft;
  throw Error("config: conv backend must be direct or fft");
}

std::string supervision_name(Supervision s) {
  switch (s) {
    case Supervision::reports_only: return "reports";
    case Supervision::masks_only: return "masks";
    case Supervision::reports_and_masks: return "both";
  }
  throw Error("invalid supervision mode");
}
Supervision supervision_from(const std::string& s) {
  if (s == "reports") return Supervision::reports_only;
  if (s == "masks") return Supervision::masks_only;
  if (s == "both") return Supervision::reports_and_masks;
  throw Error("config: supervision must be reports, masks or both");
}

json organ_to_json(const OrganSpec& o) {
  json j;
  j["code"] = o.code;
  j["name"] = o.name;
  j["center_mm"] = json{o.center_mm[0], o.center_mm[1], o.center_mm[2]};
  j["radii_mm"] = json{o.radii_mm[0], o.radii_mm[1], o.radii_mm[2]};
  j["base_hu"] = o.base_hu;
  j["center_jitter_mm"] = o.center_jitter_mm;
  j["radii_jitter_frac"] = o.radii_jitter_frac;
  j["count_probs"] = o.count_probs;
  j["tumor_diameter_mm"] = json{o.tumor_diameter_mm[0], o.tumor_diameter_mm[1]};
  j["axis_ratio_max"] = o.axis_ratio_max;
  j["tumor_offset_hu"] = json{o.tumor_offset_hu[0], o.tumor_offset_hu[1]};
  return j;
}

OrganSpec organ_from_json(const json& j, const std::string& path) {
  OrganSpec o;
  Strict s(j, path);
  s.get("code", o.code);
  s.get("name", o.name);
  s.get_array("center_mm", o.center_mm);
  s.get_array("radii_mm", o.radii_mm);
  s.get("base_hu", o.base_hu);
  s.get("center_jitter_mm", o.center_jitter_mm);
  s.get("radii_jitter_frac", o.radii_jitter_frac);
  s.get("count_probs", o.count_probs);
  s.get_array("tumor_diameter_mm", o.tumor_diameter_mm);
  s.get("axis_ratio_max", o.axis_ratio_max);
  s.get_array("tumor_offset_hu", o.tumor_offset_hu);
  s.finish();
  return o;
}

json phantom_to_json(const PhantomSpec& p) {
  json j;
  j["shape"] = shape_json(p.shape);
  j["spacing_mm"] = spacing_json(p.spacing);
  j["background_hu"] = p.background_hu;
  j["noise_hu"] = p.noise_hu;
  j["clip_hu"] = json{p.clip_hu[0], p.clip_hu[1]};
  j["organs"] = json::array();
  for (const auto& o : p.organs) j["organs"].push_back(organ_to_json(o));
  json rn;
  rn["diameter_rel_sigma"] = p.report_noise.diameter_rel_sigma;
  rn["slice_sigma_vox"] = p.report_noise.slice_sigma_vox;
  rn["p_size_missing"] = p.report_noise.p_size_missing;
  rn["p_count_unknown"] = p.report_noise.p_count_unknown;
  j["report_noise"] = rn;
  j["placement_retries"] = p.placement_retries;
  return j;
}

PhantomSpec phantom_from_json(const json& j, const std::string& path) {
  PhantomSpec p = PhantomSpec::desk_default();
  Strict s(j, path);
  s.get_array("shape", p.shape);
  s.get_array("spacing_mm", p.spacing);
  s.get("background_hu", p.background_hu);
  s.get("noise_hu", p.noise_hu);
  s.get_array("clip_hu", p.clip_hu);
  if (const json* organs = s.child("organs")) {
    if (!organs->is_array()) throw Error("config: " + path + ".organs must be an array");
    p.organs.clear();
    for (std::size_t i = 0; i < organs->size(); ++i)
      p.organs.push_back(organ_from_json((*organs)[i], path + ".organs[" + std::to_string(i) + "]"));
  }
  if (const json* rn = s.child("report_noise")) {
    Strict rs(*rn, path + ".report_noise");
    rs.get("diameter_rel_sigma", p.report_noise.diameter_rel_sigma);
    rs.get("slice_sigma_vox", p.report_noise.slice_sigma_vox);
    rs.get("p_size_missing", p.report_noise.p_size_missing);
    rs.get("p_count_unknown", p.report_noise.p_count_unknown);
    rs.finish();
  }
  s.get("placement_retries", p.placement_retries);
  s.finish();
  return p;
}

json train_to_json(const TrainConfig& t) {
  json j;
  j["lr"] = t.lr;
  j["weight_decay"] = t.weight_decay;
  j["clip_norm"] = t.clip_norm;
  j["batch_size"] = t.batch_size;
  j["patch"] = t.patch;
  j["epochs"] = t.epochs;
  j["warmup_epochs"] = t.warmup_epochs;
  j["poly_power"] = t.poly_power;
  j["w_supervised"] = t.w_supervised;
  j["w_volume"] = t.w_volume;
  j["w_ball"] = t.w_ball;
  j["w_attenuation"] = t.w_attenuation;
  j["hu_lo"] = t.hu_lo;
  j["hu_hi"] = t.hu_hi;
  j["p_target_positive"] = t.p_target_positive;
  j["supervision"] = supervision_name(t.supervision);
  j["mask_count"] = t.mask_count;
  j["p_mask_batch"] = t.p_mask_batch;
  j["hidden"] = t.hidden;
  j["att_hidden"] = t.att_hidden;
  j["seed"] = t.seed;
  j["threads"] = t.threads;
  json v;
  v["epsilon_mm3"] = t.volume.epsilon_mm3;
  v["tolerance"] = t.volume.tolerance;
  v["v_min_mm3"] = t.volume.v_min_mm3;
  v["v_max_mm3"] = t.volume.v_max_mm3;
  j["volume"] = v;
  json b;
  b["inflation"] = t.ball.localize.inflation;
  b["sigma_factor"] = t.ball.localize.sigma_factor;
  b["sigma_on_radius"] = t.ball.localize.sigma_on_radius;
  b["backend"] = backend_name(t.ball.localize.backend);
  b["ignore_margin_factor"] = t.ball.ignore_margin_factor;
  j["ball"] = b;
  json a;
  a["weight_eps"] = t.attenuation.weight_eps;
  a["hard_threshold"] = t.attenuation.hard_threshold;
  a["threshold"] = t.attenuation.threshold;
  a["var_floor"] = t.attenuation.var_floor;
  j["attenuation"] = a;
  return j;
}

TrainConfig train_from_json(const json& j, const std::string& path) {
  TrainConfig t;
  Strict s(j, path);
  s.get("lr", t.lr);
  s.get("weight_decay", t.weight_decay);
  s.get("clip_norm", t.clip_norm);
  s.get("batch_size", t.batch_size);
  s.get("patch", t.patch);
  s.get("epochs", t.epochs);
  s.get("warmup_epochs", t.warmup_epochs);
  s.get("poly_power", t.poly_power);
  s.get("w_supervised", t.w_supervised);
  s.get("w_volume", t.w_volume);
  s.get("w_ball", t.w_ball);
  s.get("w_attenuation", t.w_attenuation);
  s.get("hu_lo", t.hu_lo);
  s.get("hu_hi", t.hu_hi);
  s.get("p_target_positive", t.p_target_positive);
  std::string sup = supervision_name(t.supervision);
  s.get("supervision", sup);
  t.supervision = supervision_from(sup);
  s.get("mask_count", t.mask_count);
  s.get("p_mask_batch", t.p_mask_batch);
  s.get("hidden", t.hidden);
  s.get("att_hidden", t.att_hidden);
  s.get("seed", t.seed);
  s.get("threads", t.threads);
  if (const json* v = s.child("volume")) {
    Strict vs(*v, path + ".volume");
    vs.get("epsilon_mm3", t.volume.epsilon_mm3);
    vs.get("tolerance", t.volume.tolerance);
    vs.get("v_min_mm3", t.volume.v_min_mm3);
    vs.get("v_max_mm3", t.volume.v_max_mm3);
    vs.finish();
  }
  if (const json* b = s.child("ball")) {
    Strict bs(*b, path + ".ball");
    bs.get("inflation", t.ball.localize.inflation);
    bs.get("sigma_factor", t.ball.localize.sigma_factor);
    bs.get("sigma_on_radius", t.ball.localize.sigma_on_radius);
    std::string backend = backend_name(t.ball.localize.backend);
    bs.get("backend", backend);
    t.ball.localize.backend = backend_from(backend);
    bs.get("ignore_margin_factor", t.ball.ignore_margin_factor);
    bs.finish();
  }
  if (const json* a = s.child("attenuation")) {
    Strict as(*a, path + ".attenuation");
    as.get("weight_eps", t.attenuation.weight_eps);
    as.get("hard_threshold", t.attenuation.hard_threshold);
    as.get("threshold", t.attenuation.threshold);
    as.get("var_floor", t.attenuation.var_floor);
    as.finish();
  }
  s.finish();
  return t;
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("config: malformed JSON: ") + e.what());
  }
  RunConfig rc;
  Strict s(j, "$");
  if (const json* p = s.child("phantom")) rc.phantom = phantom_from_json(*p, "$.phantom");
  s.get("n_train", rc.n_train);
  s.get("n_test", rc.n_test);
  if (const json* t = s.child("train")) rc.train = train_from_json(*t, "$.train");
  if (const json* d = s.child("detection")) {
    Strict ds(*d, "$.detection");
    ds.get("confidence", rc.detection.confidence);
    ds.get("voxel_count", rc.detection.voxel_count);
    ds.finish();
  }
  s.get("nsd_tolerance_mm", rc.nsd_tolerance_mm);
  s.get("seed", rc.seed);
  s.finish();
  if (rc.n_train < 0 || rc.n_test < 0) throw Error("config: negative case counts");
  rc.phantom.validate();
  return rc;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

std::string RunConfig::to_json_text() const {
  json j;
  j["phantom"] = phantom_to_json(phantom);
  j["n_train"] = n_train;
  j["n_test"] = n_test;
  j["train"] = train_to_json(train);
  json d;
  d["confidence"] = detection.confidence;
  d["voxel_count"] = detection.voxel_count;
  j["detection"] = d;
  j["nsd_tolerance_mm"] = nsd_tolerance_mm;
  j["seed"] = seed;
  return j.dump(2);
}

std::string RunConfig::config_hash() const { return hex64(fnv1a64(to_json_text())); }

std::string train_config_to_json_text(const TrainConfig& t) { return train_to_json(t).dump(2); }

TrainConfig train_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("config: malformed JSON: ") + e.what());
  }
  return train_from_json(j, "$");
}

}  // namespace reseg
