#include "evtact/manifest.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include <json.hpp>

#include "evtact/common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace evt {

std::string sample_format_name(SampleFormat f) {
  switch (f) {
    case SampleFormat::Evt: return "evt";
    case SampleFormat::Aedat: return "aedat";
    case SampleFormat::FramesDir: return "frames";
  }
  throw std::invalid_argument("unknown sample format");
}

SampleFormat sample_format_from_name(const std::string& name) {
  if (name == "evt") return SampleFormat::Evt;
  if (name == "aedat") return SampleFormat::Aedat;
  if (name == "frames") return SampleFormat::FramesDir;
  throw ConfigError("unknown sample format '" + name + "'");
}

void DatasetManifest::validate(bool check_paths) const {
  if (class_names.empty()) throw ConfigError("manifest '" + name + "' has no classes");
  if (split != "train" && split != "test")
    throw ConfigError("manifest '" + name + "' split must be train or test, got '" +
                      split + "'");
  for (size_t i = 0; i < samples.size(); ++i) {
    const ManifestSample& s = samples[i];
    if (s.label < 0 || s.label >= num_classes())
      throw ConfigError("manifest '" + name + "' sample " + std::to_string(i) +
                        " (" + s.source_id + ") label " + std::to_string(s.label) +
                        " outside [0, " + std::to_string(num_classes()) + ")");
    if (s.segment && s.format != SampleFormat::Aedat)
      throw ConfigError("manifest '" + name + "' sample " + s.source_id +
                        " has a segment but is not an aedat sample");
    if (check_paths && !fs::exists(s.path))
      throw ConfigError("manifest '" + name + "' sample " + s.source_id +
                        " path does not exist: " + s.path);
  }
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  json j;
  j["name"] = manifest.name;
  j["split"] = manifest.split;
  j["class_names"] = manifest.class_names;
  j["samples"] = json::array();
  fs::path base = fs::absolute(fs::path(path)).parent_path();
  for (const ManifestSample& s : manifest.samples) {
    // Paths under the manifest's directory are stored relative so the whole
    // directory stays relocatable.
    fs::path abs = fs::absolute(s.path);
    fs::path rel = abs.lexically_relative(base);
    bool inside = !rel.empty() && rel.begin()->string() != "..";
    json js;
    js["source_id"] = s.source_id;
    js["path"] = inside ? rel.string() : abs.string();
    js["format"] = sample_format_name(s.format);
    js["label"] = s.label;
    if (!s.subject_id.empty()) js["subject_id"] = s.subject_id;
    if (s.segment) {
      js["segment"] = {{"class_id", s.segment->class_id},
                       {"start_usec", s.segment->start_usec},
                       {"end_usec", s.segment->end_usec}};
    }
    j["samples"].push_back(std::move(js));
  }
  write_file(path, j.dump(2) + "\n");
}

DatasetManifest load_manifest(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("manifest " + path + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.split = j.at("split").get<std::string>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    fs::path base = fs::absolute(fs::path(path)).parent_path();
    for (const json& js : j.at("samples")) {
      ManifestSample s;
      s.source_id = js.at("source_id").get<std::string>();
      fs::path p = js.at("path").get<std::string>();
      s.path = p.is_absolute() ? p.string() : (base / p).string();
      s.format = sample_format_from_name(js.at("format").get<std::string>());
      s.label = js.at("label").get<int>();
      if (js.contains("subject_id")) s.subject_id = js["subject_id"].get<std::string>();
      if (js.contains("segment")) {
        GestureSegment seg;
        seg.class_id = js["segment"].at("class_id").get<int>();
        seg.start_usec = js["segment"].at("start_usec").get<std::int64_t>();
        seg.end_usec = js["segment"].at("end_usec").get<std::int64_t>();
        s.segment = seg;
      }
      m.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ConfigError("manifest " + path + ": " + e.what());
  }
  m.validate(true);
  return m;
}

void check_subject_disjoint(const DatasetManifest& train,
                            const DatasetManifest& test) {
  std::set<std::string> train_subjects;
  for (const ManifestSample& s : train.samples)
    if (!s.subject_id.empty()) train_subjects.insert(s.subject_id);
  for (const ManifestSample& s : test.samples)
    if (train_subjects.count(s.subject_id))
      throw ConfigError("subject '" + s.subject_id +
                        "' appears in both train and test splits");
}

EventStream load_sample_stream(const ManifestSample& sample) {
  try {
    switch (sample.format) {
      case SampleFormat::Evt:
        return parse_canonical(read_file(sample.path));
      case SampleFormat::Aedat: {
        EventStream full = parse_aedat(read_file(sample.path)).stream;
        if (!sample.segment) return full;
        return slice_stream(full, sample.segment->start_usec,
                            sample.segment->end_usec);
      }
      case SampleFormat::FramesDir:
        throw std::invalid_argument("frames-directory samples hold no events");
    }
  } catch (const std::exception& e) {
    throw std::runtime_error("sample " + sample.source_id + " (" + sample.path +
                             "): " + e.what());
  }
  throw std::invalid_argument("unknown sample format");
}

namespace {

DatasetManifest synth_split(const SynthCorpusSpec& spec, std::uint64_t seed,
                            const std::string& out_dir, const std::string& split,
                            int per_class, std::uint64_t salt) {
  DatasetManifest m;
  m.name = "synthetic";
  m.split = split;
  for (SynthPattern p : spec.patterns) m.class_names.push_back(synth_pattern_name(p));
  for (size_t ci = 0; ci < spec.patterns.size(); ++ci) {
    for (int i = 0; i < per_class; ++i) {
      std::uint64_t sample_seed =
          mix_seed(seed, mix_seed(salt, ci * 1000 + static_cast<std::uint64_t>(i)));
      SynthResult r = synth_stream(spec.patterns[ci], spec.params, sample_seed);
      std::string base = split + "_" + m.class_names[ci] + "_" + std::to_string(i);
      std::string file = fs::absolute(fs::path(out_dir) / (base + ".evt")).string();
      write_file(file, write_canonical(r.stream));
      ManifestSample s;
      s.source_id = base;
      s.path = file;
      s.format = SampleFormat::Evt;
      s.label = static_cast<int>(ci);
      m.samples.push_back(std::move(s));
    }
  }
  return m;
}

}  // namespace

SynthCorpus build_synth_manifest(const SynthCorpusSpec& spec, std::uint64_t seed,
                                 const std::string& out_dir) {
  if (spec.patterns.empty()) throw ConfigError("synthetic corpus has no patterns");
  if (spec.train_per_class < 1 || spec.test_per_class < 1)
    throw ConfigError("synthetic corpus needs at least one sample per class");
  fs::create_directories(out_dir);
  SynthCorpus corpus;
  corpus.train = synth_split(spec, seed, out_dir, "train", spec.train_per_class, 1);
  corpus.test = synth_split(spec, seed, out_dir, "test", spec.test_per_class, 2);
  save_manifest((fs::path(out_dir) / "train_manifest.json").string(), corpus.train);
  save_manifest((fs::path(out_dir) / "test_manifest.json").string(), corpus.test);
  return corpus;
}

namespace {

const std::vector<std::string> kDvsClassNames = {
    "hand_clapping",     "right_hand_wave", "left_hand_wave",
    "right_arm_clockwise", "right_arm_counter_clockwise", "left_arm_clockwise",
    "left_arm_counter_clockwise", "arm_roll", "air_drums",
    "air_guitar",        "other_gestures"};

std::vector<std::string> read_trial_list(const std::string& path) {
  std::vector<std::string> trials;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
      line.pop_back();
    if (!line.empty()) trials.push_back(line);
  }
  return trials;
}

std::string subject_of(const std::string& trial) {
  auto pos = trial.find('_');
  return pos == std::string::npos ? trial : trial.substr(0, pos);
}

DatasetManifest dvs_split(const std::string& root,
                          const std::vector<std::string>& trials,
                          const std::string& split, int num_classes) {
  DatasetManifest m;
  m.name = num_classes == 10 ? "dvs_gesture_10" : "dvs_gesture_11";
  m.split = split;
  m.class_names.assign(kDvsClassNames.begin(), kDvsClassNames.begin() + num_classes);
  for (const std::string& trial : trials) {
    fs::path aedat = fs::path(root) / trial;
    fs::path labels = aedat;
    labels.replace_extension("");
    labels += "_labels.csv";
    if (!fs::exists(labels))
      throw ConfigError("missing label file for trial " + trial + ": " +
                        labels.string());
    std::vector<GestureSegment> segments = parse_gesture_labels(read_file(labels.string()));
    int seg_idx = 0;
    for (const GestureSegment& seg : segments) {
      int label = seg.class_id - 1;
      ++seg_idx;
      if (label >= num_classes) continue;
      ManifestSample s;
      s.source_id = trial + "#" + std::to_string(seg_idx - 1);
      s.path = aedat.string();
      s.format = SampleFormat::Aedat;
      s.label = label;
      s.subject_id = subject_of(trial);
      s.segment = seg;
      m.samples.push_back(std::move(s));
    }
  }
  return m;
}

}  // namespace

DvsManifests build_dvs_manifest(const std::string& root, DvsProtocol protocol) {
  int num_classes = protocol == DvsProtocol::TenClass ? 10 : 11;
  std::vector<std::string> train_trials =
      read_trial_list((fs::path(root) / "trials_to_train.txt").string());
  std::vector<std::string> test_trials =
      read_trial_list((fs::path(root) / "trials_to_test.txt").string());
  DvsManifests out;
  out.train = dvs_split(root, train_trials, "train", num_classes);
  out.test = dvs_split(root, test_trials, "test", num_classes);
  check_subject_disjoint(out.train, out.test);
  out.train.validate(true);
  out.test.validate(true);
  return out;
}

DatasetManifest materialize_manifest(const DatasetManifest& manifest,
                                     const std::string& out_dir) {
  fs::create_directories(out_dir);
  DatasetManifest out = manifest;
  parallel_chunks(static_cast<int>(manifest.samples.size()),
                  [&](int, int begin, int end) {
                    for (int i = begin; i < end; ++i) {
                      const ManifestSample& src = manifest.samples[static_cast<size_t>(i)];
                      EventStream stream = load_sample_stream(src);
                      std::string safe = src.source_id;
                      std::replace(safe.begin(), safe.end(), '#', '_');
                      std::replace(safe.begin(), safe.end(), '/', '_');
                      std::string file =
                          fs::absolute(fs::path(out_dir) / (safe + ".evt")).string();
                      write_file(file, write_canonical(stream));
                      ManifestSample& dst = out.samples[static_cast<size_t>(i)];
                      dst.path = file;
                      dst.format = SampleFormat::Evt;
                      dst.segment.reset();
                    }
                  });
  save_manifest((fs::path(out_dir) / "manifest.json").string(), out);
  return out;
}

}  // namespace evt
