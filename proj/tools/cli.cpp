#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "abfr/anchors.hpp"
#include "abfr/binary_io.hpp"
#include "abfr/error.hpp"
#include "abfr/eval.hpp"
#include "abfr/model.hpp"
#include "abfr/nifti.hpp"
#include "abfr/optim.hpp"
#include "abfr/pipeline.hpp"
#include "abfr/rng.hpp"
#include "abfr/sampling.hpp"
#include "abfr/volume.hpp"

namespace abfr {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kStreamVariance = 0x56415249ULL;
constexpr std::uint64_t kStreamShuffle = 0x53485546ULL;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + ": no path given");
  if (!fs::is_regular_file(path)) throw ConfigError(what + " not found: " + path);
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Volume4D load_volume(const std::string& path) {
  require_file(path, "volume");
  return has_suffix(path, ".nii") ? load_nifti(path).volume : load_raw(path);
}

Mask3D load_mask(const std::string& path) {
  require_file(path, "mask");
  return volume_to_mask(has_suffix(path, ".nii") ? load_nifti(path).volume : load_raw(path));
}

// --- configuration ---------------------------------------------------------

json phantom_json(const PhantomSpec& s, std::size_t subjects) {
  json pairs = json::array();
  for (const auto& [a, b] : s.planted_pairs) pairs.push_back({a, b});
  return {{"subjects", subjects},
          {"dims", {s.dims.x, s.dims.y, s.dims.z}},
          {"outer_radii", nullptr},
          {"thickness", s.thickness},
          {"timepoints", s.timepoints},
          {"n_regions", s.n_regions},
          {"class_effect", s.class_effect},
          {"noise_sigma", s.noise_sigma},
          {"latent_noise", s.latent_noise},
          {"planted_pairs", pairs}};
}

PhantomSpec phantom_from_json(const json& j) {
  PhantomSpec s;
  const auto d = j.at("dims").get<std::vector<std::size_t>>();
  if (d.size() != 3) throw ConfigError("phantom.dims: expected 3 values");
  s.dims = {d[0], d[1], d[2]};
  // Radii default to 7/16 of each dimension.
  if (!j.contains("outer_radii") || j.at("outer_radii").is_null())
    s.outer_radii = {0.4375 * static_cast<double>(s.dims.x), 0.4375 * static_cast<double>(s.dims.y),
                     0.4375 * static_cast<double>(s.dims.z)};
  else
    s.outer_radii = j.at("outer_radii").get<std::array<double, 3>>();
  s.thickness = j.at("thickness").get<double>();
  s.timepoints = j.at("timepoints").get<std::size_t>();
  s.n_regions = j.at("n_regions").get<std::size_t>();
  s.class_effect = j.at("class_effect").get<double>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.latent_noise = j.at("latent_noise").get<double>();
  s.planted_pairs.clear();
  for (const auto& p : j.at("planted_pairs")) {
    const auto v = p.get<std::vector<std::size_t>>();
    if (v.size() != 2) throw ConfigError("phantom.planted_pairs: expected pairs");
    s.planted_pairs.emplace_back(v[0], v[1]);
  }
  return s;
}

json default_config() {
  const IterativeOptions it;
  const RandomAnchorOptions ra;
  return {{"seed", nullptr},
          {"phantom", phantom_json(PhantomSpec{}, 80)},
          {"anchors",
           {{"mode", "random"},
            {"count", ra.count},
            {"side", ra.side},
            {"tau", ra.tau},
            {"max_attempts", ra.max_attempts},
            {"roi", json::array()},
            {"stride", {8, 8, 8}},
            {"bin_width", 0.5}}},
          {"sampling",
           {{"count", it.count}, {"sizes", it.sizes}, {"tau", it.tau}, {"variance_repeats", 0}}},
          {"model", to_json(ModelConfig{})},
          {"train", to_json(TrainSpec{})}};
}

void check_keys(const json& given, const json& reference, const std::string& where) {
  if (!given.is_object()) throw ConfigError("config" + where + ": expected an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = where + "." + key;
    if (!reference.contains(key)) throw ConfigError("config: unknown key " + path.substr(1));
    if (reference.at(key).is_object()) check_keys(value, reference.at(key), path);
  }
}

json resolve_config(const std::string& path) {
  json cfg = default_config();
  if (path.empty()) return cfg;
  require_file(path, "config file");
  std::ifstream in(path);
  json file;
  try {
    file = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  check_keys(file, cfg, "");
  cfg.merge_patch(file);
  return cfg;
}

std::uint64_t parse_seed(const std::string& text, const std::string& source) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used, 0);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || text.front() == '-')
    throw ConfigError(source + ": not an unsigned integer seed: '" + text + "'");
  return v;
}

// --seed wins over the config file, which wins over ABFR_SEED.
std::uint64_t resolve_seed(json& cfg, const CLI::Option* flag, std::uint64_t flag_value) {
  if (flag->count() > 0) {
    cfg["seed"] = flag_value;
  } else if (cfg["seed"].is_null()) {
    const char* env = std::getenv("ABFR_SEED");
    if (env == nullptr)
      throw ConfigError("a seed is required: pass --seed, set \"seed\" in the config file, or set ABFR_SEED");
    cfg["seed"] = parse_seed(env, "ABFR_SEED");
  }
  try {
    return cfg["seed"].get<std::uint64_t>();
  } catch (const json::exception&) {
    throw ConfigError("config: seed must be an unsigned integer");
  }
}

template <class T>
void overlay(json& section, const char* key, const CLI::Option* opt, const T& value) {
  if (opt->count() > 0) section[key] = value;
}

void dump_config(const fs::path& dir, json cfg, const std::string& command) {
  cfg["command"] = command;
  write_text(dir / "config.json", cfg.dump(2) + "\n");
}

// --- manifests -------------------------------------------------------------

struct ManifestRow {
  std::string subject_id;
  std::string path;  // resolved against the manifest's directory
  std::optional<int> label;
};

constexpr const char* kManifestHeader = "subject_id,path,label";

std::vector<ManifestRow> read_manifest(const std::string& path) {
  require_file(path, "manifest");
  std::ifstream in(path, std::ios::binary);
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader)
    throw FormatError("manifest " + path + ": expected header '" + kManifestHeader + "'");
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestRow> rows;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.emplace_back();
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty())
      throw FormatError("manifest " + path + " line " + std::to_string(number) +
                        ": expected subject_id,path,label");
    ManifestRow row{fields[0], fields[1], std::nullopt};
    if (fs::path(row.path).is_relative()) row.path = (base / row.path).string();
    if (fields[2] == "0" || fields[2] == "1") {
      row.label = fields[2] == "1";
    } else if (!fields[2].empty()) {
      throw FormatError("manifest " + path + " line " + std::to_string(number) +
                        ": label must be 0, 1 or empty");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError("manifest " + path + ": no subjects");
  return rows;
}

std::string manifest_line(const std::string& id, const std::string& path, std::optional<int> label) {
  return id + "," + path + "," + (label ? std::to_string(*label) : std::string()) + "\n";
}

std::vector<SubjectRepresentation> load_dataset(const std::string& manifest) {
  std::vector<SubjectRepresentation> data;
  for (const auto& row : read_manifest(manifest)) {
    require_file(row.path, "representation of " + row.subject_id);
    SubjectRepresentation rep = load_representation(row.path);
    rep.subject_id = row.subject_id;
    if (row.label) rep.label = row.label;
    if (!rep.label) throw ConfigError("subject " + row.subject_id + " has no label");
    if (!data.empty() && (rep.anchors() != data.front().anchors() ||
                          rep.positions.cols != data.front().positions.cols))
      throw ConfigError("subject " + row.subject_id + " has a different shape than " +
                        data.front().subject_id);
    data.push_back(std::move(rep));
  }
  return data;
}

// --- shared model/train flags ----------------------------------------------

struct ModelFlags {
  std::string encoder, head;
  std::size_t embed_dim = 0, layers = 0, heads = 0, grid_size = 0, batch = 0, folds = 0;
  double keep_ratio = 0, lr = 0, weight_decay = 0;
  int epochs = 0;
  int jobs = 1;
  CLI::Option *o_encoder{}, *o_head{}, *o_embed{}, *o_layers{}, *o_heads{}, *o_grid{},
      *o_keep{}, *o_epochs{}, *o_lr{}, *o_wd{}, *o_batch{}, *o_folds{};
};

void add_model_flags(CLI::App* sub, ModelFlags& f) {
  f.o_encoder = sub->add_option("--encoder-block", f.encoder, "encoder FFN block: " + valid_variant_names());
  f.o_head = sub->add_option("--head-block", f.head, "classifier head block");
  f.o_embed = sub->add_option("--embed-dim", f.embed_dim, "token width D");
  f.o_layers = sub->add_option("--layers", f.layers, "encoder layers");
  f.o_heads = sub->add_option("--heads", f.heads, "attention heads");
  f.o_grid = sub->add_option("--grid-size", f.grid_size, "KAN grid size");
  f.o_keep = sub->add_option("--keep-ratio", f.keep_ratio, "Top-K keep ratio");
  f.o_epochs = sub->add_option("--epochs", f.epochs, "training epochs");
  f.o_lr = sub->add_option("--lr", f.lr, "peak learning rate");
  f.o_wd = sub->add_option("--weight-decay", f.weight_decay, "AdamW weight decay");
  f.o_batch = sub->add_option("--batch-size", f.batch, "subjects per batch");
  f.o_folds = sub->add_option("--folds", f.folds, "cross-validation folds");
  sub->add_option("--jobs", f.jobs, "folds trained concurrently")->check(CLI::PositiveNumber);
}

void apply_model_flags(json& cfg, const ModelFlags& f) {
  json& m = cfg["model"];
  overlay(m, "encoder_block", f.o_encoder, f.encoder);
  overlay(m, "head_block", f.o_head, f.head);
  overlay(m, "embed_dim", f.o_embed, f.embed_dim);
  overlay(m, "n_layers", f.o_layers, f.layers);
  overlay(m, "n_heads", f.o_heads, f.heads);
  overlay(m, "grid_size", f.o_grid, f.grid_size);
  overlay(m, "keep_ratio", f.o_keep, f.keep_ratio);
  json& t = cfg["train"];
  overlay(t, "epochs", f.o_epochs, f.epochs);
  overlay(t, "lr", f.o_lr, f.lr);
  overlay(t, "weight_decay", f.o_wd, f.weight_decay);
  overlay(t, "batch_size", f.o_batch, f.batch);
  overlay(t, "folds", f.o_folds, f.folds);
}

// Model config from the resolved JSON, with input widths taken from the data.
ModelConfig model_for(json& cfg, const std::vector<SubjectRepresentation>& data) {
  ModelConfig mc = model_config_from_json(cfg["model"]);
  mc.input_dim = data.front().anchors();
  mc.pos_dim = data.front().positions.cols;
  validate(mc);
  cfg["model"] = to_json(mc);
  return mc;
}

TrainSpec train_for(json& cfg, std::uint64_t seed) {
  TrainSpec ts = train_spec_from_json(cfg["train"]);
  ts.seed = seed;
  validate(ts);
  cfg["train"] = to_json(ts);
  return ts;
}

// --- commands --------------------------------------------------------------

struct PhantomArgs {
  std::string out, config;
  std::size_t n = 0, timepoints = 0;
  std::vector<std::size_t> dims;
  double class_effect = 0, noise = 0;
  std::uint64_t seed = 0;
  int jobs = 1;
  CLI::Option *o_n{}, *o_seed{}, *o_dims{}, *o_t{}, *o_effect{}, *o_noise{};
};

int cmd_phantom(const PhantomArgs& a, std::ostream& out, std::ostream& err) {
  json cfg = resolve_config(a.config);
  const std::uint64_t seed = resolve_seed(cfg, a.o_seed, a.seed);
  json& p = cfg["phantom"];
  overlay(p, "subjects", a.o_n, a.n);
  overlay(p, "dims", a.o_dims, a.dims);
  overlay(p, "timepoints", a.o_t, a.timepoints);
  overlay(p, "class_effect", a.o_effect, a.class_effect);
  overlay(p, "noise_sigma", a.o_noise, a.noise);
  const PhantomSpec spec = phantom_from_json(p);
  p["outer_radii"] = spec.outer_radii;
  const auto n = p.at("subjects").get<std::size_t>();
  if (n == 0) throw ConfigError("phantom: --n must be >= 1");
  validate(spec);

  const fs::path dir(a.out);
  prepare_dir(dir);
  save_raw(mask_to_volume(phantom_mask(spec)), (dir / "mask.abfv").string());
  std::vector<std::string> errors(n);
  const long count = static_cast<long>(n);
#pragma omp parallel for num_threads(a.jobs) schedule(dynamic, 1)
  for (long i = 0; i < count; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      const Phantom ph = make_phantom(subject_spec(spec, seed, idx), subject_label(idx));
      save_raw(ph.volume, (dir / (subject_name(idx) + ".abfv")).string());
    } catch (const std::exception& e) {
      errors[idx] = e.what();
    }
  }
  std::string manifest = std::string(kManifestHeader) + "\n";
  std::size_t failed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) {
      err << "phantom: " << subject_name(i) << " failed: " << errors[i] << "\n";
      ++failed;
      continue;
    }
    manifest += manifest_line(subject_name(i), subject_name(i) + ".abfv", subject_label(i));
  }
  write_text(dir / "manifest.csv", manifest);
  dump_config(dir, cfg, "phantom");
  out << "phantom: wrote " << n - failed << " subjects to " << dir.string() << "\n";
  return failed ? kExitPartial : kExitOk;
}

struct AnchorArgs {
  std::string mask, out, config, mode;
  std::size_t count = 0;
  long side = 0;
  std::uint64_t tau = 0, seed = 0, max_attempts = 0;
  std::vector<long> roi, stride;
  double bin_width = 0;
  CLI::Option *o_mode{}, *o_count{}, *o_side{}, *o_tau{}, *o_seed{}, *o_roi{}, *o_stride{},
      *o_bin{}, *o_attempts{};
};

int cmd_anchors(const AnchorArgs& a, std::ostream& out, std::ostream& err) {
  json cfg = resolve_config(a.config);
  json& c = cfg["anchors"];
  overlay(c, "mode", a.o_mode, a.mode);
  overlay(c, "count", a.o_count, a.count);
  overlay(c, "side", a.o_side, a.side);
  overlay(c, "tau", a.o_tau, a.tau);
  overlay(c, "roi", a.o_roi, a.roi);
  overlay(c, "stride", a.o_stride, a.stride);
  overlay(c, "bin_width", a.o_bin, a.bin_width);
  overlay(c, "max_attempts", a.o_attempts, a.max_attempts);
  const auto mode = c.at("mode").get<std::string>();
  if (mode != "random" && mode != "grid")
    throw ConfigError("anchors: mode must be random or grid, got '" + mode + "'");
  const auto side = c.at("side").get<long>();
  const auto tau = c.at("tau").get<std::uint64_t>();
  const auto bin_width = c.at("bin_width").get<double>();
  const Mask3D mask = load_mask(a.mask);
  cfg["inputs"] = {{"mask", a.mask}};

  AnchorSet set;
  json report = {{"mode", mode}};
  if (mode == "random") {
    const std::uint64_t seed = resolve_seed(cfg, a.o_seed, a.seed);
    RandomAnchorOptions o;
    o.count = c.at("count").get<std::size_t>();
    o.side = side;
    o.tau = tau;
    o.max_attempts = c.at("max_attempts").get<std::uint64_t>();
    Rng rng(Rng::mix(seed, kStreamAnchors));
    std::uint64_t attempts = 0;
    set = select_random_anchors(mask, o, rng, &attempts);
    set.seed = seed;
    report["attempts"] = attempts;
    report["acceptance_rate"] = static_cast<double>(set.size()) / static_cast<double>(attempts);
  } else {
    GridAnchorOptions g = default_grid_options(mask, side, tau);
    const auto roi = c.at("roi").get<std::vector<long>>();
    if (!roi.empty()) {
      if (roi.size() != 6) throw ConfigError("anchors: --roi takes x0 y0 z0 x1 y1 z1");
      g.roi_min = {roi[0], roi[1], roi[2]};
      g.roi_max = {roi[3], roi[4], roi[5]};
    }
    const auto stride = c.at("stride").get<std::vector<long>>();
    if (stride.size() == 1) g.stride = {stride[0], stride[0], stride[0]};
    else if (stride.size() == 3) g.stride = {stride[0], stride[1], stride[2]};
    else throw ConfigError("anchors: --stride takes 1 or 3 values");
    GridDiagnostics diag;
    set = select_grid_anchors(mask, g, &diag);
    report["candidates"] = diag.candidates;
    report["dropped_support"] = diag.dropped_support;
    report["dropped_bounds"] = diag.dropped_bounds;
    report["offsets"] = diag.offsets;
  }
  // A starved anchor makes the set unusable downstream, but the boundary
  // diagnostics only need the centres and are still written.
  std::string starved;
  try {
    build_label_image(set, mask);
  } catch (const ContractError& e) {
    starved = e.what();
  }

  const fs::path dir(a.out);
  prepare_dir(dir);
  fs::remove(dir / "anchors.json");
  fs::remove(dir / "labels.abfl");
  if (starved.empty())
    save_anchor_set(set, (dir / "anchors.json").string(), (dir / "labels.abfl").string());
  const BoundaryReport r = boundary_distance_report(set, mask, bin_width);
  std::string distances = "anchor_id,distance\n";
  for (std::size_t j = 0; j < r.distances.size(); ++j)
    distances += std::to_string(j + 1) + "," + fmt(r.distances[j]) + "\n";
  write_text(dir / "distances.csv", distances);
  std::string hist = "bin_left,bin_right,count\n";
  for (const auto& b : r.histogram)
    hist += fmt(b.left) + "," + fmt(b.right) + "," + std::to_string(b.count) + "\n";
  write_text(dir / "histogram.csv", hist);
  report["anchors"] = set.size();
  report["mean_distance"] = r.mean;
  report["label_image"] = starved.empty() ? "ok" : starved;
  write_text(dir / "report.json", report.dump(2) + "\n");
  dump_config(dir, cfg, "anchors");
  out << "anchors: " << set.size() << " " << mode << " anchors, mean boundary distance "
      << fmt(r.mean) << "\n";
  if (!starved.empty()) {
    err << "error: " << starved << "; anchors.json not written (use another seed or fewer or smaller anchors)\n";
    return kExitConfig;
  }
  return kExitOk;
}

struct RepresentArgs {
  std::string manifest, mask, anchors, out, config;
  std::size_t count = 0, variance_repeats = 0;
  std::vector<long> sizes;
  std::uint64_t tau = 0, seed = 0;
  int jobs = 1;
  CLI::Option *o_count{}, *o_sizes{}, *o_tau{}, *o_seed{}, *o_repeats{};
};

struct SubjectOutput {
  std::string error;
  double coverage = 0;
  std::vector<std::size_t> degenerate;  // per iteration
  std::size_t cells = 0;
  std::optional<double> variance;
};

int cmd_represent(const RepresentArgs& a, std::ostream& out, std::ostream& err) {
  json cfg = resolve_config(a.config);
  const std::uint64_t seed = resolve_seed(cfg, a.o_seed, a.seed);
  json& c = cfg["sampling"];
  overlay(c, "count", a.o_count, a.count);
  overlay(c, "sizes", a.o_sizes, a.sizes);
  overlay(c, "tau", a.o_tau, a.tau);
  overlay(c, "variance_repeats", a.o_repeats, a.variance_repeats);
  IterativeOptions opt;
  opt.count = c.at("count").get<std::size_t>();
  opt.sizes = c.at("sizes").get<std::vector<long>>();
  opt.tau = c.at("tau").get<std::uint64_t>();
  const auto repeats = c.at("variance_repeats").get<std::size_t>();
  if (opt.count == 0) throw ConfigError("represent: --N must be >= 1");
  if (opt.sizes.empty()) throw ConfigError("represent: --sizes must not be empty");
  for (long s : opt.sizes)
    if (s < 1) throw ConfigError("represent: patch sizes must be >= 1");
  if (repeats == 1) throw ConfigError("represent: --variance-repeats must be 0 or >= 2");

  const auto rows = read_manifest(a.manifest);
  const Mask3D mask = load_mask(a.mask);
  require_file(a.anchors, "anchors");
  const AnchorSet anchors = load_anchor_set(a.anchors);
  if (!(anchors.dims == mask.dims())) throw ConfigError("represent: anchor labels and mask differ in shape");
  cfg["inputs"] = {{"manifest", a.manifest}, {"mask", a.mask}, {"anchors", a.anchors}};

  const fs::path dir(a.out);
  prepare_dir(dir);
  std::vector<SubjectOutput> results(rows.size());
  const long n = static_cast<long>(rows.size());
#pragma omp parallel for num_threads(a.jobs) schedule(dynamic, 1)
  for (long i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    auto& r = results[idx];
    try {
      const Volume4D volume = load_volume(rows[idx].path);
      const Matrix series = anchor_series(volume, mask, anchors);
      const std::uint64_t subject_seed = Rng::mix(Rng::mix(seed, kStreamSubject), idx);
      Rng rng(subject_seed);
      IterativeResult it = iterative_representation(volume, mask, series, opt, rng);
      it.rep.seed = subject_seed;
      it.rep.label = rows[idx].label;
      it.rep.subject_id = rows[idx].subject_id;
      save_representation(it.rep, (dir / (rows[idx].subject_id + ".abfr")).string());
      std::vector<PatchSet> sets;
      for (const auto& iter : it.iterations) {
        sets.push_back({iter.centers, iter.side});
        r.degenerate.push_back(iter.fc.degenerate);
      }
      r.cells = it.rep.fc.rows * it.rep.fc.cols;
      r.coverage = gm_coverage(sets, mask).percent;
      if (repeats >= 2) {
        Rng vrng(Rng::mix(subject_seed, kStreamVariance));
        r.variance = fc_sampling_variance(volume, mask, series, opt, repeats, vrng);
      }
    } catch (const std::exception& e) {
      r.error = e.what();
    }
  }

  std::string manifest = std::string(kManifestHeader) + "\n";
  std::string coverage = "subject_id,coverage_percent\n";
  std::string flags = "subject_id,iteration,side,degenerate,cells\n";
  std::string variance = "subject_id,R,repeats,variance\n";
  std::size_t failed = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& id = rows[i].subject_id;
    const auto& r = results[i];
    if (!r.error.empty()) {
      err << "represent: " << id << " failed: " << r.error << "\n";
      ++failed;
      continue;
    }
    manifest += manifest_line(id, id + ".abfr", rows[i].label);
    coverage += id + "," + fmt(r.coverage) + "\n";
    for (std::size_t k = 0; k < r.degenerate.size(); ++k)
      flags += id + "," + std::to_string(k + 1) + "," + std::to_string(opt.sizes[k]) + "," +
               std::to_string(r.degenerate[k]) + "," + std::to_string(r.cells) + "\n";
    if (r.variance)
      variance += id + "," + std::to_string(opt.sizes.size()) + "," + std::to_string(repeats) +
                  "," + fmt(*r.variance) + "\n";
  }
  write_text(dir / "manifest.csv", manifest);
  write_text(dir / "coverage.csv", coverage);
  write_text(dir / "flags.csv", flags);
  write_text(dir / "variance.csv", variance);
  dump_config(dir, cfg, "represent");
  out << "represent: " << rows.size() - failed << " of " << rows.size() << " subjects written to "
      << dir.string() << "\n";
  return failed ? kExitPartial : kExitOk;
}

struct TrainArgs {
  std::string manifest, out, config;
  std::uint64_t seed = 0;
  bool shuffle_labels = false;
  ModelFlags model;
  CLI::Option* o_seed{};
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  json cfg = resolve_config(a.config);
  const std::uint64_t seed = resolve_seed(cfg, a.o_seed, a.seed);
  apply_model_flags(cfg, a.model);
  auto data = load_dataset(a.manifest);
  const ModelConfig mc = model_for(cfg, data);
  const TrainSpec ts = train_for(cfg, seed);
  cfg["inputs"] = {{"manifest", a.manifest}, {"shuffle_labels", a.shuffle_labels}};
  if (a.shuffle_labels) {
    Rng rng(Rng::mix(seed, kStreamShuffle));
    for (std::size_t i = data.size(); i > 1; --i)
      std::swap(data[i - 1].label, data[rng.uniform_int(0, i - 1)].label);
  }

  const fs::path dir(a.out);
  prepare_dir(dir);
  CvResult cv;
  try {
    cv = run_cv(data, mc, ts, a.model.jobs);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    err << "train: " << e.what() << "\n";
    return kExitPartial;
  }
  std::vector<MetricSet> metrics;
  std::string predictions = "fold,subject_id,label,predicted,score\n";
  for (const auto& f : cv.folds) {
    const std::string stem = "fold-" + std::to_string(f.fold);
    save_checkpoint((dir / (stem + ".abfk")).string(), f.model.named_parameters());
    write_text(dir / (stem + "_log.csv"), epoch_log_csv(f.log));
    metrics.push_back(f.metrics);
    for (const auto& p : f.predictions)
      predictions += std::to_string(f.fold) + "," + p.subject_id + "," + std::to_string(p.label) +
                     "," + std::to_string(p.predicted) + "," + fmt(p.score) + "\n";
  }
  write_text(dir / "metrics.csv", metrics_csv(metrics));
  write_text(dir / "summary.csv", summary_csv(cv.summary));
  write_text(dir / "predictions.csv", predictions);
  dump_config(dir, cfg, "train");
  out << "train: " << variant_name(mc.encoder_block) << "-" << variant_name(mc.head_block) << " "
      << ts.folds << "-fold acc " << fmt(cv.summary.mean.acc) << " +/- " << fmt(cv.summary.std.acc)
      << ", auc " << fmt(cv.summary.mean.auc) << "\n";
  return kExitOk;
}

struct BenchArgs {
  std::string manifest, out, config;
  std::vector<std::string> configs;
  std::uint64_t seed = 0;
  ModelFlags model;
  CLI::Option* o_seed{};
};

std::vector<std::string> default_bench_configs() {
  std::vector<std::string> out;
  for (auto v : kAllVariants) {
    const std::string name(variant_name(v));
    out.push_back(name + "-" + name);
  }
  return out;
}

int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream& err) {
  json cfg = resolve_config(a.config);
  const std::uint64_t seed = resolve_seed(cfg, a.o_seed, a.seed);
  apply_model_flags(cfg, a.model);
  const auto data = load_dataset(a.manifest);
  const ModelConfig base = model_for(cfg, data);
  const TrainSpec ts = train_for(cfg, seed);
  const auto names = a.configs.empty() ? default_bench_configs() : a.configs;
  std::vector<BenchConfig> configs;
  for (const auto& name : names) {
    const auto dash = name.find('-');
    BenchConfig bc{name, base};
    bc.model.encoder_block = parse_variant(name.substr(0, dash));
    bc.model.head_block =
        dash == std::string::npos ? bc.model.encoder_block : parse_variant(name.substr(dash + 1));
    configs.push_back(bc);
  }
  cfg["inputs"] = {{"manifest", a.manifest}, {"configs", names}};

  const fs::path dir(a.out);
  prepare_dir(dir);
  const auto records = benchmark(configs, data, ts);
  std::size_t failed = 0;
  for (const auto& r : records) {
    if (!r.error.empty()) {
      err << "bench: " << r.config << " failed: " << r.error << "\n";
      ++failed;
    } else {
      out << "bench: " << r.config << " params " << r.params << " seconds " << fmt(r.seconds) << "\n";
    }
  }
  write_text(dir / "bench.csv", bench_csv(records));
  dump_config(dir, cfg, "bench");
  return failed ? kExitPartial : kExitOk;
}

struct EvalArgs {
  std::string a, b, out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  require_file(a.a, "metrics file");
  require_file(a.b, "metrics file");
  const auto read = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_metrics_csv(ss.str());
  };
  const auto ma = read(a.a), mb = read(a.b);
  if (ma.size() != mb.size())
    throw ConfigError("eval: fold counts differ (" + std::to_string(ma.size()) + " vs " +
                      std::to_string(mb.size()) + ")");
  std::string report = "metric,mean_a,mean_b,mean_diff,t,dof,p_one_tailed,degenerate\n";
  for (const char* name : kMetricNames) {
    std::vector<double> va, vb;
    for (const auto& m : ma) va.push_back(metric_value(m, name));
    for (const auto& m : mb) vb.push_back(metric_value(m, name));
    const TTest t = paired_t_one_tailed(va, vb);
    report += std::string(name) + "," + fmt(summarize(va).mean) + "," + fmt(summarize(vb).mean) +
              "," + fmt(t.mean_diff) + "," + fmt(t.t) + "," + std::to_string(t.dof) + "," +
              fmt(t.p) + "," + (t.degenerate ? "1" : "0") + "\n";
  }
  if (!a.out.empty()) {
    const fs::path path(a.out);
    if (path.has_parent_path()) prepare_dir(path.parent_path());
    write_text(path, report);
  }
  out << report;
  return kExitOk;
}

struct NiftiArgs {
  std::string file;
  bool as_json = false;
};

int cmd_nifti_info(const NiftiArgs& a, std::ostream& out, std::ostream&) {
  require_file(a.file, "NIfTI file");
  const NiftiImage img = load_nifti(a.file);
  const auto& h = img.header;
  if (a.as_json) {
    const json j = {{"dim0", h.dim0},          {"dims", h.dims},
                    {"datatype", h.datatype},  {"bitpix", h.bitpix},
                    {"vox_offset", h.vox_offset}, {"scl_slope", h.scl_slope},
                    {"scl_inter", h.scl_inter}, {"byte_swapped", h.byte_swapped}};
    out << j.dump(2) << "\n";
  } else {
    out << describe(h) << "\n";
  }
  return kExitOk;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"abfr: anchor-based functional representations and KAN transformer classifiers"};
  app.name("abfr");
  app.require_subcommand(1);
  app.set_version_flag("--version", "abfr 0.1.0");

  PhantomArgs ph;
  auto* phantom = app.add_subcommand("phantom", "write a synthetic phantom cohort");
  phantom->add_option("--out", ph.out, "output directory")->required();
  phantom->add_option("--config", ph.config, "JSON config file");
  ph.o_n = phantom->add_option("--n", ph.n, "number of subjects");
  ph.o_seed = phantom->add_option("--seed", ph.seed, "random seed");
  ph.o_dims = phantom->add_option("--dims", ph.dims, "grid size X Y Z")->expected(3)->delimiter(',');
  ph.o_t = phantom->add_option("--timepoints", ph.timepoints, "timepoints per volume");
  ph.o_effect = phantom->add_option("--class-effect", ph.class_effect, "planted coupling for class 1");
  ph.o_noise = phantom->add_option("--noise-sigma", ph.noise, "voxel noise standard deviation");
  phantom->add_option("--jobs", ph.jobs, "subjects written concurrently")->check(CLI::PositiveNumber);

  AnchorArgs an;
  auto* anchors = app.add_subcommand("anchors", "select anchor patches and report boundary distances");
  anchors->add_option("--mask", an.mask, "grey-matter mask (.abfv or .nii)")->required();
  anchors->add_option("--out", an.out, "output directory")->required();
  anchors->add_option("--config", an.config, "JSON config file");
  an.o_mode = anchors->add_option("--mode", an.mode, "random or grid");
  an.o_count = anchors->add_option("--H", an.count, "number of random anchors");
  an.o_side = anchors->add_option("--s", an.side, "patch side in voxels");
  an.o_tau = anchors->add_option("--tau", an.tau, "minimum GM voxels per patch");
  an.o_seed = anchors->add_option("--seed", an.seed, "random seed");
  an.o_roi = anchors->add_option("--roi", an.roi, "grid ROI x0 y0 z0 x1 y1 z1 (inclusive)")->expected(6)->delimiter(',');
  an.o_stride = anchors->add_option("--stride", an.stride, "grid stride, 1 or 3 values")->expected(1, 3)->delimiter(',');
  an.o_bin = anchors->add_option("--bin-width", an.bin_width, "histogram bin width in voxels");
  an.o_attempts = anchors->add_option("--max-attempts", an.max_attempts, "rejection sampling budget (0: 1000 H)");

  RepresentArgs re;
  auto* represent = app.add_subcommand("represent", "build per-subject FC representations");
  represent->add_option("--manifest", re.manifest, "subject manifest CSV")->required();
  represent->add_option("--mask", re.mask, "grey-matter mask")->required();
  represent->add_option("--anchors", re.anchors, "anchors.json")->required();
  represent->add_option("--out", re.out, "output directory")->required();
  represent->add_option("--config", re.config, "JSON config file");
  re.o_count = represent->add_option("--N", re.count, "patches per iteration");
  re.o_sizes = represent->add_option("--sizes", re.sizes, "patch side per iteration")->delimiter(',');
  re.o_tau = represent->add_option("--tau-sample", re.tau, "minimum GM voxels per sampled patch");
  re.o_seed = represent->add_option("--seed", re.seed, "random seed");
  re.o_repeats = represent->add_option("--variance-repeats", re.variance_repeats, "repeats for variance.csv (0 skips)");
  represent->add_option("--jobs", re.jobs, "subjects processed concurrently")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "cross-validated training");
  train->add_option("--manifest", tr.manifest, "representation manifest CSV")->required();
  train->add_option("--out", tr.out, "output directory")->required();
  train->add_option("--config", tr.config, "JSON config file");
  tr.o_seed = train->add_option("--seed", tr.seed, "random seed");
  train->add_flag("--shuffle-labels", tr.shuffle_labels, "permute labels (null control)");
  add_model_flags(train, tr.model);

  BenchArgs be;
  auto* bench = app.add_subcommand("bench", "time cross-validation per encoder-head config");
  bench->add_option("--manifest", be.manifest, "representation manifest CSV")->required();
  bench->add_option("--out", be.out, "output directory")->required();
  bench->add_option("--config", be.config, "JSON config file");
  bench->add_option("--configs", be.configs, "encoder-head names, e.g. fastkan-wavkan")->delimiter(',');
  be.o_seed = bench->add_option("--seed", be.seed, "random seed");
  add_model_flags(bench, be.model);

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "one-tailed paired t-test of per-fold metrics (A > B)");
  eval->add_option("--a", ev.a, "metrics.csv of model A")->required();
  eval->add_option("--b", ev.b, "metrics.csv of model B")->required();
  eval->add_option("--out", ev.out, "report CSV path");

  NiftiArgs ni;
  auto* nifti = app.add_subcommand("nifti-info", "print a NIfTI-1 header summary");
  nifti->add_option("file", ni.file, "image path")->required();
  nifti->add_flag("--json", ni.as_json, "print JSON");

  std::vector<const char*> argv{"abfr"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*phantom) return cmd_phantom(ph, out, err);
  if (*anchors) return cmd_anchors(an, out, err);
  if (*represent) return cmd_represent(re, out, err);
  if (*train) return cmd_train(tr, out, err);
  if (*bench) return cmd_bench(be, out, err);
  if (*eval) return cmd_eval(ev, out, err);
  return cmd_nifti_info(ni, out, err);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const InfeasibleError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    err << "error: config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitPartial;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace abfr
