#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evtact/events.hpp"

namespace evt {

enum class SampleFormat { Evt, Aedat, FramesDir };

std::string sample_format_name(SampleFormat f);
SampleFormat sample_format_from_name(const std::string& name);

struct ManifestSample {
  std::string source_id;
  std::string path;  // resolved to absolute on load
  SampleFormat format = SampleFormat::Evt;
  int label = 0;
  std::string subject_id;                  // empty when unknown
  std::optional<GestureSegment> segment;   // aedat samples only
};

struct DatasetManifest {
  std::string name;
  std::string split;  // "train" or "test"
  std::vector<std::string> class_names;
  std::vector<ManifestSample> samples;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  void validate(bool check_paths) const;
};

void save_manifest(const std::string& path, const DatasetManifest& manifest);
// Relative sample paths are resolved against the manifest's directory;
// validates labels and path existence.
DatasetManifest load_manifest(const std::string& path);

// Train and test must not share any subject (samples without a subject are
// exempt). Throws naming the first offender.
void check_subject_disjoint(const DatasetManifest& train,
                            const DatasetManifest& test);

// Event stream for one sample: canonical EVT is read directly, AEDAT is
// decoded and cut to the sample's segment (timestamps rebased to 0).
EventStream load_sample_stream(const ManifestSample& sample);

struct SynthCorpusSpec {
  SynthParams params;
  int train_per_class = 8;
  int test_per_class = 4;
  std::vector<SynthPattern> patterns = {
      SynthPattern::TranslatingBar, SynthPattern::RotatingDot,
      SynthPattern::ExpandingRing, SynthPattern::Flicker};
};

struct SynthCorpus {
  DatasetManifest train;
  DatasetManifest test;
};

// Writes a balanced corpus of canonical EVT files plus the two manifest JSON
// files under out_dir. Identical seeds produce byte-identical output.
SynthCorpus build_synth_manifest(const SynthCorpusSpec& spec, std::uint64_t seed,
                                 const std::string& out_dir);

enum class DvsProtocol { TenClass, ElevenClass };

// Expects <root>/trials_to_train.txt and <root>/trials_to_test.txt listing
// AEDAT file names (one per line, subject prefix before the first '_'), each
// present next to a <trial>_labels.csv. The ten-class protocol drops the
// final class from both the class list and the samples.
struct DvsManifests {
  DatasetManifest train;
  DatasetManifest test;
};

DvsManifests build_dvs_manifest(const std::string& root, DvsProtocol protocol);

// Copies every sample into a canonical EVT file under out_dir (AEDAT samples
// are cut to their segment first) and returns the rewritten manifest, which
// is also saved as <out_dir>/manifest.json.
DatasetManifest materialize_manifest(const DatasetManifest& manifest,
                                     const std::string& out_dir);

}  // namespace evt
