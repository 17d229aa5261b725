#include "elok/io.hpp"

#include <cstdio>
#include <sstream>

namespace elok {

namespace {

// 17 significant digits round-trip IEEE doubles exactly in decimal
std::string num(double v) { return format_g(v, 17); }

double to_double(const std::string& s) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw DataError("trailing junk in number '" + s + "'");
        return v;
    } catch (const std::invalid_argument&) {
        throw DataError("not a number: '" + s + "'");
    } catch (const std::out_of_range&) {
        throw DataError("number out of range: '" + s + "'");
    }
}

std::size_t to_size(const std::string& s) {
    double v = to_double(s);
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v)))
        throw DataError("expected non-negative integer, got '" + s + "'");
    return static_cast<std::size_t>(v);
}

}  // namespace

std::string point_cloud_to_text(const PointCloud& c) {
    c.check_features();
    std::string out;
    if (c.feature_width > 0) out += "# features=" + std::to_string(c.feature_width) + "\n";
    for (std::size_t i = 0; i < c.size(); ++i) {
        out += num(c[i].x) + " " + num(c[i].y) + " " + num(c[i].z);
        for (std::size_t f = 0; f < c.feature_width; ++f)
            out += " " + num(c.features[i * c.feature_width + f]);
        out += "\n";
    }
    return out;
}

PointCloud point_cloud_from_text(const std::string& text) {
    PointCloud c;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] == '#') {
            auto pos = line.find("features=");
            if (pos != std::string::npos) c.feature_width = to_size(line.substr(pos + 9));
            continue;
        }
        auto toks = split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() != 3 + c.feature_width)
            throw DataError("point line has " + std::to_string(toks.size()) + " columns, expected " +
                            std::to_string(3 + c.feature_width));
        c.points.push_back({to_double(toks[0]), to_double(toks[1]), to_double(toks[2])});
        for (std::size_t f = 0; f < c.feature_width; ++f)
            c.features.push_back(to_double(toks[3 + f]));
    }
    c.check_features();
    return c;
}

void write_point_cloud(const std::string& path, const PointCloud& c) {
    write_text_file(path, point_cloud_to_text(c));
}

PointCloud read_point_cloud(const std::string& path) {
    try {
        return point_cloud_from_text(read_text_file(path));
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

std::string contour_set_to_text(const ContourSet& cs) {
    std::string out = "# torso contour set\ncontours " + std::to_string(cs.contours.size()) + "\n";
    for (const auto& c : cs.contours) {
        out += "contour " + std::string(view_label_name(c.view)) + " " +
               (c.closed ? std::string("closed") : std::string("open")) + " " +
               std::to_string(c.polyline.size()) + "\n";
        out += "origin " + num(c.plane.origin.x) + " " + num(c.plane.origin.y) + " " +
               num(c.plane.origin.z) + "\n";
        out += "axis_u " + num(c.plane.axis_u.x) + " " + num(c.plane.axis_u.y) + " " +
               num(c.plane.axis_u.z) + "\n";
        out += "axis_v " + num(c.plane.axis_v.x) + " " + num(c.plane.axis_v.y) + " " +
               num(c.plane.axis_v.z) + "\n";
        for (const auto& p : c.polyline) out += num(p.u) + " " + num(p.v) + "\n";
    }
    return out;
}

ContourSet contour_set_from_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    auto next_line = [&](const char* what) {
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            return split_ws(line);
        }
        throw DataError(std::string("unexpected end of contour file, expected ") + what);
    };

    auto header = next_line("contours header");
    if (header.size() != 2 || header[0] != "contours")
        throw DataError("contour file must start with 'contours <count>'");
    std::size_t count = to_size(header[1]);

    ContourSet cs;
    cs.contours.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        auto ch = next_line("contour header");
        if (ch.size() != 4 || ch[0] != "contour")
            throw DataError("expected 'contour <view> <open|closed> <n>'");
        Contour c;
        c.view = view_label_from_name(ch[1]);
        if (ch[2] == "closed")
            c.closed = true;
        else if (ch[2] == "open")
            c.closed = false;
        else
            throw DataError("expected 'open' or 'closed', got '" + ch[2] + "'");
        std::size_t npts = to_size(ch[3]);

        auto read_vec = [&](const char* tag) {
            auto t = next_line(tag);
            if (t.size() != 4 || t[0] != tag)
                throw DataError(std::string("expected '") + tag + " x y z'");
            return Vec3{to_double(t[1]), to_double(t[2]), to_double(t[3])};
        };
        c.plane.origin = read_vec("origin");
        c.plane.axis_u = read_vec("axis_u");
        c.plane.axis_v = read_vec("axis_v");
        for (std::size_t i = 0; i < npts; ++i) {
            auto t = next_line("polyline point");
            if (t.size() != 2) throw DataError("polyline point must have 2 columns");
            c.polyline.push_back({to_double(t[0]), to_double(t[1])});
        }
        cs.contours.push_back(std::move(c));
    }
    cs.validate();
    return cs;
}

void write_contour_set(const std::string& path, const ContourSet& cs) {
    write_text_file(path, contour_set_to_text(cs));
}

ContourSet read_contour_set(const std::string& path) {
    try {
        return contour_set_from_text(read_text_file(path));
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

std::string electrodes_to_text(const ElectrodeSet& e) {
    std::string out = "# electrodes\n";
    for (std::size_t i = 0; i < kNumElectrodes; ++i) {
        out += std::string(kElectrodeNames[i]) + " " + num(e[i].x) + " " + num(e[i].y) + " " +
               num(e[i].z) + "\n";
    }
    return out;
}

ElectrodeSet electrodes_from_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    ElectrodeSet e;
    std::array<bool, kNumElectrodes> seen{};
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto toks = split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() != 4) throw DataError("electrode row must be 'NAME x y z'");
        std::size_t idx = electrode_index(toks[0]);
        if (seen[idx]) throw DataError("duplicate electrode '" + toks[0] + "'");
        seen[idx] = true;
        e[idx] = {to_double(toks[1]), to_double(toks[2]), to_double(toks[3])};
    }
    for (std::size_t i = 0; i < kNumElectrodes; ++i)
        if (!seen[i]) throw DataError(std::string("missing electrode '") + kElectrodeNames[i] + "'");
    return e;
}

void write_electrodes(const std::string& path, const ElectrodeSet& e) {
    write_text_file(path, electrodes_to_text(e));
}

ElectrodeSet read_electrodes(const std::string& path) {
    try {
        return electrodes_from_text(read_text_file(path));
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

}  // namespace elok
