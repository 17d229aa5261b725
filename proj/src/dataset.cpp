#include "elok/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "elok/io.hpp"

namespace elok {

namespace fs = std::filesystem;

std::vector<std::string> DatasetManifest::ids_for_split(const std::string& split) const {
    std::vector<std::string> out;
    for (const SubjectRecord& r : subjects)
        if (r.split == split) out.push_back(r.id);
    return out;
}

const SubjectRecord& DatasetManifest::record(const std::string& id) const {
    for (const SubjectRecord& r : subjects)
        if (r.id == id) return r;
    throw DataError("manifest: unknown subject id '" + id + "'");
}

std::string manifest_to_text(const DatasetManifest& m) {
    std::string out;
    out += "# subject manifest: id split seed\n";
    out += "n_subjects " + std::to_string(m.n_subjects) + "\n";
    out += "seed " + std::to_string(m.seed) + "\n";
    for (const SubjectRecord& r : m.subjects)
        out += r.id + " " + r.split + " " + std::to_string(r.seed) + "\n";
    return out;
}

DatasetManifest manifest_from_text(const std::string& text) {
    DatasetManifest m;
    bool have_n = false, have_seed = false;
    for (const std::string& raw : split_char(text, '\n')) {
        std::string line = raw;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::vector<std::string> tok = split_ws(line);
        if (tok.empty()) continue;
        if (tok[0] == "n_subjects" && tok.size() == 2) {
            m.n_subjects = static_cast<std::size_t>(std::stoull(tok[1]));
            have_n = true;
        } else if (tok[0] == "seed" && tok.size() == 2) {
            m.seed = std::stoull(tok[1]);
            have_seed = true;
        } else if (tok.size() == 3) {
            SubjectRecord r;
            r.id = tok[0];
            r.split = tok[1];
            if (r.split != "train" && r.split != "val" && r.split != "test")
                throw DataError("manifest: bad split '" + r.split + "'");
            r.seed = std::stoull(tok[2]);
            m.subjects.push_back(std::move(r));
        } else {
            throw DataError("manifest: malformed line '" + raw + "'");
        }
    }
    if (!have_n || !have_seed) throw DataError("manifest: missing n_subjects/seed header");
    if (m.subjects.size() != m.n_subjects)
        throw DataError("manifest: subject count does not match header");
    return m;
}

DatasetManifest read_manifest(const std::string& dataset_dir) {
    return manifest_from_text(read_text_file(dataset_dir + "/manifest.txt"));
}

namespace {

std::string subject_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%04zu", i);
    return buf;
}

}  // namespace

DatasetManifest make_dataset(const MakeDatasetOptions& opt) {
    if (opt.n_subjects == 0) throw DataError("make_dataset: need at least one subject");
    if (opt.out_dir.empty()) throw DataError("make_dataset: output directory required");
    if (!(opt.train_frac >= 0 && opt.val_frac >= 0 && opt.train_frac + opt.val_frac <= 1.0))
        throw DataError("make_dataset: bad split fractions");
    if (opt.n_topology > opt.n_dense)
        throw DataError("make_dataset: topology size exceeds dense size");
    opt.protocol.validate();

    const std::size_t n = opt.n_subjects;
    std::size_t n_train = static_cast<std::size_t>(
        std::llround(opt.train_frac * static_cast<double>(n)));
    std::size_t n_val =
        static_cast<std::size_t>(std::llround(opt.val_frac * static_cast<double>(n)));
    if (n_train + n_val > n) n_val = n - n_train;

    // Shuffle indices for the split assignment; subject geometry seeds do
    // not depend on the split.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    RandomStream split_rng(mix_seed(opt.seed, 0x5917));
    split_rng.shuffle(order);
    std::vector<std::string> split_of(n);
    for (std::size_t k = 0; k < n; ++k) {
        const char* s = (k < n_train) ? "train" : (k < n_train + n_val) ? "val" : "test";
        split_of[order[k]] = s;
    }

    DatasetManifest manifest;
    manifest.seed = opt.seed;
    manifest.n_subjects = n;
    manifest.subjects.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        manifest.subjects[i].id = subject_id(i);
        manifest.subjects[i].split = split_of[i];
        manifest.subjects[i].seed = mix_seed(opt.seed, 0xa11ce, i);
    }

    fs::create_directories(fs::path(opt.out_dir) / "subjects");
    parallel_for(n, opt.threads, [&](std::size_t i) {
        const SubjectRecord& rec = manifest.subjects[i];
        fs::path dir = fs::path(opt.out_dir) / "subjects" / rec.id;
        fs::create_directories(dir);

        auto [spec, surface] = sample_torso(rec.seed);
        ElectrodeSet electrodes = place_electrodes(spec, surface);
        SliceResult slices = slice_contours(surface, opt.protocol, mix_seed(rec.seed, 0x517));
        PointCloud dense = surface.sample_surface(opt.n_dense, mix_seed(rec.seed, 0xde));
        PointCloud coarse = surface.sample_surface(opt.n_coarse, mix_seed(rec.seed, 0xc0));
        PointCloud topology = fps(dense, opt.n_topology, 0);

        write_contour_set((dir / "contours.txt").string(), slices.contours);
        write_electrodes((dir / "electrodes.txt").string(), electrodes);
        write_point_cloud((dir / "coarse.xyz").string(), coarse);
        write_point_cloud((dir / "dense.xyz").string(), dense);
        write_point_cloud((dir / "topology.xyz").string(), topology);

        KeyValues meta;
        meta["height"] = format_g(spec.height, 17);
        meta["bmi_scale"] = format_g(spec.bmi_scale, 17);
        meta["n_contours"] = std::to_string(slices.contours.contours.size());
        meta["fallback"] = slices.fallback_used ? "1" : "0";
        write_text_file((dir / "meta.txt").string(), canonical_key_values(meta));
    });

    write_text_file_atomic((fs::path(opt.out_dir) / "manifest.txt").string(),
                           manifest_to_text(manifest));
    return manifest;
}

Subject load_subject(const std::string& dataset_dir, const std::string& id) {
    fs::path dir = fs::path(dataset_dir) / "subjects" / id;
    Subject s;
    s.id = id;
    s.contours = read_contour_set((dir / "contours.txt").string());
    s.electrodes = read_electrodes((dir / "electrodes.txt").string());
    s.coarse = read_point_cloud((dir / "coarse.xyz").string());
    s.dense = read_point_cloud((dir / "dense.xyz").string());
    s.topology = read_point_cloud((dir / "topology.xyz").string());
    s.meta = read_key_value_file((dir / "meta.txt").string());
    return s;
}

}  // namespace elok
