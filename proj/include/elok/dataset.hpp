#ifndef ELOK_DATASET_HPP
#define ELOK_DATASET_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "elok/common.hpp"
#include "elok/contours.hpp"
#include "elok/electrodes.hpp"
#include "elok/geometry.hpp"
#include "elok/torso.hpp"

namespace elok {

struct SubjectRecord {
    std::string id;
    std::string split;  // train | val | test
    std::uint64_t seed = 0;
};

struct DatasetManifest {
    std::uint64_t seed = 0;
    std::size_t n_subjects = 0;
    std::vector<SubjectRecord> subjects;  // sorted by id

    std::vector<std::string> ids_for_split(const std::string& split) const;
    const SubjectRecord& record(const std::string& id) const;
};

std::string manifest_to_text(const DatasetManifest& m);
DatasetManifest manifest_from_text(const std::string& text);
DatasetManifest read_manifest(const std::string& dataset_dir);

struct MakeDatasetOptions {
    std::size_t n_subjects = 10;
    std::uint64_t seed = 0;
    std::string out_dir;
    SliceProtocol protocol;
    int threads = 1;
    double train_frac = 0.60;
    double val_frac = 0.10;
    std::size_t n_coarse = 1024;
    std::size_t n_dense = 4096;
    std::size_t n_topology = 128;
};

// Generates subjects/<id>/{contours.txt, electrodes.txt, coarse.xyz,
// dense.xyz, topology.xyz, meta.txt} plus a manifest with the split
// assignment. Bit-identical for identical options, at any thread count.
DatasetManifest make_dataset(const MakeDatasetOptions& opt);

struct Subject {
    std::string id;
    ContourSet contours;
    ElectrodeSet electrodes;
    PointCloud coarse;
    PointCloud dense;
    PointCloud topology;
    KeyValues meta;
};

Subject load_subject(const std::string& dataset_dir, const std::string& id);

}  // namespace elok

#endif
