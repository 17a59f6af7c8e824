// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dualsft/error.hpp"
#include "dualsft/parameter_vector.hpp"

namespace dualsft {

/**
 * Flat float64 record: a plain-text manifest followed by raw little-endian
 * doubles. Used for model checkpoints and optimizer state.
 *
 *     dualsft-flat v1
 *     meta <key> <value>          (zero or more)
 *     segment <name> <offset> <d0>x<d1>...
 *     data <count>
 *     <count * 8 bytes>
 */
struct FlatRecord {
    std::map<std::string, std::string> meta;
    ParameterVector values;
};

inline void save_flat(const std::filesystem::path& path, const FlatRecord& rec) {
    static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian hosts");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
    out << "dualsft-flat v1\n";
    for (const auto& [k, v] : rec.meta) out << "meta " << k << ' ' << v << '\n';
    for (const auto& s : rec.values.segments()) {
        out << "segment " << s.name << ' ' << s.offset << ' ';
        for (std::size_t i = 0; i < s.shape.size(); ++i) out << (i ? "x" : "") << s.shape[i];
        out << '\n';
    }
    out << "data " << rec.values.size() << '\n';
    out.write(reinterpret_cast<const char*>(rec.values.values().data()),
              static_cast<std::streamsize>(rec.values.size() * sizeof(double)));
    if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

inline FlatRecord load_flat(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    std::string line;
    std::getline(in, line);
    if (line != "dualsft-flat v1") throw ConfigError("'" + path.string() + "' is not a flat checkpoint");
    FlatRecord rec;
    std::vector<Segment> segments;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "meta") {
            std::string k, v;
            ls >> k;
            std::getline(ls >> std::ws, v);
            rec.meta[k] = v;
        } else if (tag == "segment") {
            Segment s;
            std::string shape;
            ls >> s.name >> s.offset >> shape;
            std::istringstream ss(shape);
            std::string dim;
            while (std::getline(ss, dim, 'x')) s.shape.push_back(std::stoul(dim));
            segments.push_back(std::move(s));
        } else if (tag == "data") {
            std::size_t count = 0;
            ls >> count;
            Vec v(count);
            in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double)));
            if (!in) throw ConfigError("truncated data block in '" + path.string() + "'");
            rec.values = segments.empty() ? ParameterVector(std::move(v))
                                          : ParameterVector(std::move(v), std::move(segments));
            return rec;
        } else {
            throw ConfigError("unexpected manifest line '" + line + "'");
        }
    }
    throw ConfigError("missing data block in '" + path.string() + "'");
}

} // namespace dualsft
