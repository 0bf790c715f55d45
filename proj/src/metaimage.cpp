/*
 * Copyright 2026 The divreg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "divreg/metaimage.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace divreg {

static_assert(std::endian::native == std::endian::little, "MetaImage payloads assume a little-endian host");

namespace {

struct MetaHeader {
    Shape dims;        // slowest first
    Spacing spacing;   // slowest first
    int channels = 1;
    std::string element_type;
    std::string data_file;
};

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename N>
std::vector<N> parse_numbers(const std::string &key, const std::string &text) {
    std::vector<N> out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) {
        N v{};
        const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc() || p != tok.data() + tok.size()) throw MetaParseError("bad numeric value '" + tok + "' for " + key);
        out.push_back(v);
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

std::size_t element_size(const std::string &type) {
    if (type == "MET_FLOAT") return 4;
    if (type == "MET_DOUBLE") return 8;
    if (type == "MET_SHORT") return 2;
    throw MetaParseError("unsupported ElementType " + type);
}

// Reads header and payload; returns payload converted to double.
std::vector<double> read_meta(const std::filesystem::path &path, MetaHeader &hdr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MetaImageError("cannot open " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    bool have_data_file = false;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (trim(line).empty()) continue;
            throw MetaParseError("malformed header line '" + line + "' in " + path.string());
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        kv[key] = value;
        if (key == "ElementDataFile") {
            have_data_file = true;
            break;
        }
    }
    if (!have_data_file) throw MetaParseError("missing ElementDataFile in " + path.string());
    for (const char *k : {"NDims", "DimSize", "ElementType"}) {
        if (!kv.count(k)) throw MetaParseError(std::string("missing ") + k + " in " + path.string());
    }
    const auto ndims = parse_numbers<int>("NDims", kv["NDims"]);
    if (ndims.size() != 1) throw MetaParseError("NDims must be a single integer");
    if (ndims[0] != 2 && ndims[0] != 3) throw MetaDimensionError("NDims must be 2 or 3, got " + std::to_string(ndims[0]));
    auto dims = parse_numbers<Index>("DimSize", kv["DimSize"]);
    if (static_cast<int>(dims.size()) != ndims[0]) throw MetaParseError("DimSize length disagrees with NDims");
    std::vector<double> spacing(dims.size(), 1.0);
    if (kv.count("ElementSpacing")) {
        spacing = parse_numbers<double>("ElementSpacing", kv["ElementSpacing"]);
        if (spacing.size() != dims.size()) throw MetaParseError("ElementSpacing length disagrees with NDims");
    }
    if (kv.count("ElementNumberOfChannels")) {
        const auto ch = parse_numbers<int>("ElementNumberOfChannels", kv["ElementNumberOfChannels"]);
        if (ch.size() != 1 || ch[0] < 1) throw MetaParseError("bad ElementNumberOfChannels");
        hdr.channels = ch[0];
    }
    if (kv.count("BinaryDataByteOrderMSB") && (kv["BinaryDataByteOrderMSB"] == "True")) {
        throw MetaParseError("big-endian payloads are not supported");
    }
    if (kv.count("CompressedData") && kv["CompressedData"] == "True") throw MetaParseError("compressed payloads are not supported");
    for (Index d : dims) {
        if (d < 1) throw MetaParseError("DimSize entries must be positive");
    }
    std::reverse(dims.begin(), dims.end());
    std::reverse(spacing.begin(), spacing.end());
    hdr.dims = dims;
    hdr.spacing = spacing;
    hdr.element_type = kv["ElementType"];
    hdr.data_file = kv["ElementDataFile"];

    std::string payload;
    if (hdr.data_file == "LOCAL") {
        payload.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    } else {
        std::ifstream raw(path.parent_path() / hdr.data_file, std::ios::binary);
        if (!raw) throw MetaImageError("cannot open data file " + hdr.data_file);
        payload.assign(std::istreambuf_iterator<char>(raw), std::istreambuf_iterator<char>());
    }
    const std::size_t esz = element_size(hdr.element_type);
    const auto count = static_cast<std::size_t>(shape_size(hdr.dims)) * static_cast<std::size_t>(hdr.channels);
    if (payload.size() != count * esz) {
        throw MetaSizeError("payload holds " + std::to_string(payload.size()) + " bytes, header implies " +
                            std::to_string(count * esz) + " in " + path.string());
    }
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        const char *src = payload.data() + i * esz;
        if (esz == 4) {
            float f;
            std::memcpy(&f, src, 4);
            out[i] = f;
        } else if (esz == 8) {
            std::memcpy(&out[i], src, 8);
        } else {
            std::int16_t s;
            std::memcpy(&s, src, 2);
            out[i] = s;
        }
    }
    return out;
}

void write_meta(const std::filesystem::path &path, const Shape &dims, const Spacing &spacing, int channels,
                const std::string &type, const std::string &comment, const char *payload, std::size_t bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw MetaImageError("cannot open " + path.string() + " for writing");
    os << "ObjectType = Image\n";
    os << "NDims = " << dims.size() << "\n";
    os << "BinaryData = True\n";
    os << "BinaryDataByteOrderMSB = False\n";
    os << "CompressedData = False\n";
    if (!comment.empty()) os << "Comment = " << comment << "\n";
    os << "ElementSpacing =";
    for (auto it = spacing.rbegin(); it != spacing.rend(); ++it) os << ' ' << format_double(*it);
    os << "\nDimSize =";
    for (auto it = dims.rbegin(); it != dims.rend(); ++it) os << ' ' << *it;
    os << "\n";
    if (channels != 1) os << "ElementNumberOfChannels = " << channels << "\n";
    os << "ElementType = " << type << "\n";
    os << "ElementDataFile = LOCAL\n";
    os.write(payload, static_cast<std::streamsize>(bytes));
    if (!os) throw MetaImageError("failed writing " + path.string());
}

} // namespace

Image load_image(const std::filesystem::path &path) {
    MetaHeader hdr;
    auto data = read_meta(path, hdr);
    if (hdr.channels != 1) throw MetaParseError("expected a scalar image in " + path.string());
    return Image(hdr.dims, hdr.spacing, std::vector<float>(data.begin(), data.end()));
}

void save_image(const Image &img, const std::filesystem::path &path) {
    write_meta(path, img.dims(), img.spacing(), 1, "MET_FLOAT", "", reinterpret_cast<const char *>(img.values().data()),
               img.values().size() * sizeof(float));
}

LabelMap load_labels(const std::filesystem::path &path) {
    MetaHeader hdr;
    auto data = read_meta(path, hdr);
    if (hdr.channels != 1) throw MetaParseError("expected a scalar label map in " + path.string());
    std::vector<std::int32_t> ids(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data[i] != std::floor(data[i])) throw MetaParseError("non-integer label in " + path.string());
        ids[i] = static_cast<std::int32_t>(data[i]);
    }
    return LabelMap(hdr.dims, hdr.spacing, std::move(ids));
}

void save_labels(const LabelMap &lab, const std::filesystem::path &path) {
    std::vector<std::int16_t> buf(lab.values().size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
        if (lab.values()[i] > 32767) throw std::invalid_argument("label id exceeds MET_SHORT range");
        buf[i] = static_cast<std::int16_t>(lab.values()[i]);
    }
    write_meta(path, lab.dims(), lab.spacing(), 1, "MET_SHORT", "", reinterpret_cast<const char *>(buf.data()),
               buf.size() * sizeof(std::int16_t));
}

DisplacementField load_field(const std::filesystem::path &path) {
    MetaHeader hdr;
    auto data = read_meta(path, hdr);
    const int rank = static_cast<int>(hdr.dims.size());
    if (hdr.channels != rank) throw MetaParseError("field needs one channel per axis in " + path.string());
    const Index n = shape_size(hdr.dims);
    std::vector<double> comp(static_cast<std::size_t>(n * rank));
    // Interleaved x-first channels -> planar, slowest axis first.
    for (Index v = 0; v < n; ++v)
        for (int c = 0; c < rank; ++c) comp[static_cast<std::size_t>((rank - 1 - c) * n + v)] = data[static_cast<std::size_t>(v * rank + c)];
    return DisplacementField(hdr.dims, hdr.spacing, std::move(comp));
}

void save_field(const DisplacementField &field, const std::filesystem::path &path) {
    const int rank = field.rank();
    const Index n = field.voxels();
    std::vector<double> buf(static_cast<std::size_t>(n * rank));
    for (Index v = 0; v < n; ++v)
        for (int c = 0; c < rank; ++c) buf[static_cast<std::size_t>(v * rank + c)] = field.component(rank - 1 - c, v);
    write_meta(path, field.dims(), field.spacing(), rank, "MET_DOUBLE",
               "displacement field; voxel units; components x-first; pull convention out(p) = in(p + u(p))",
               reinterpret_cast<const char *>(buf.data()), buf.size() * sizeof(double));
}

} // namespace divreg
