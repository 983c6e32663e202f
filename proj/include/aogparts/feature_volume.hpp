#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aogparts/errors.hpp"
#include "aogparts/geometry.hpp"

namespace aogparts {

/// One exported conv layer: geometry plus a (slice, row, column) tensor.
struct FeatureLayer {
    LayerGeometry geom;
    std::vector<float> values;

    float at(std::uint32_t slice, int iy, int ix) const {
        return values[(slice * geom.slice_size()) + static_cast<std::size_t>(iy) * geom.width +
                      static_cast<std::size_t>(ix)];
    }
    float& at(std::uint32_t slice, int iy, int ix) {
        return values[(slice * geom.slice_size()) + static_cast<std::size_t>(iy) * geom.width +
                      static_cast<std::size_t>(ix)];
    }
    std::span<const float> slice(std::uint32_t s) const {
        return std::span<const float>(values).subspan(s * geom.slice_size(), geom.slice_size());
    }

    friend bool operator==(const FeatureLayer&, const FeatureLayer&) = default;
};

/// Conv activations of one image across the exported layers.
struct FeatureVolume {
    std::string image_id;
    std::uint32_t image_width_px = 0;
    std::uint32_t image_height_px = 0;
    std::vector<FeatureLayer> layers;

    const FeatureLayer* find_layer(std::uint32_t layer_id) const {
        const auto it = std::find_if(layers.begin(), layers.end(),
                                     [&](const FeatureLayer& l) { return l.geom.layer_id == layer_id; });
        return it == layers.end() ? nullptr : &*it;
    }

    const FeatureLayer& layer(std::uint32_t layer_id) const {
        if (const auto* l = find_layer(layer_id)) {
            return *l;
        }
        throw LookupError("volume '" + image_id + "' has no layer " + std::to_string(layer_id));
    }

    friend bool operator==(const FeatureVolume& a, const FeatureVolume& b) {
        if (a.image_id != b.image_id || a.image_width_px != b.image_width_px ||
            a.image_height_px != b.image_height_px || a.layers.size() != b.layers.size()) {
            return false;
        }
        for (std::size_t i = 0; i < a.layers.size(); ++i) {
            const auto& la = a.layers[i];
            const auto& lb = b.layers[i];
            // bitwise, NaN payloads included
            if (!(la.geom == lb.geom) || la.values.size() != lb.values.size() ||
                std::memcmp(la.values.data(), lb.values.data(), la.values.size() * sizeof(float)) != 0) {
                return false;
            }
        }
        return true;
    }
};

struct Violation {
    std::string location;
    std::string message;
};

/// Every broken FeatureVolume / LayerGeometry invariant, in file order.
inline std::vector<Violation> validate_volume(const FeatureVolume& vol) {
    std::vector<Violation> out;
    if (vol.image_width_px == 0 || vol.image_height_px == 0) {
        out.push_back({"image", "image dimensions must be positive"});
    }
    if (vol.layers.empty()) {
        out.push_back({"image", "volume has no layers"});
    }
    for (std::size_t li = 0; li < vol.layers.size(); ++li) {
        const auto& layer = vol.layers[li];
        const auto& g = layer.geom;
        const std::string where = "layer " + std::to_string(g.layer_id);
        if (!(g.stride_px > 0.0F)) {
            out.push_back({where, "stride_px must be > 0"});
        }
        if (!(g.rf_size_px > 0.0F)) {
            out.push_back({where, "rf_size_px must be > 0"});
        }
        if (!std::isfinite(g.offset_px)) {
            out.push_back({where, "offset_px must be finite"});
        }
        if (g.channels == 0 || g.height == 0 || g.width == 0) {
            out.push_back({where, "channels, height and width must be >= 1"});
        }
        if (layer.values.size() != g.element_count()) {
            out.push_back({where, "tensor has " + std::to_string(layer.values.size()) +
                                      " values, geometry requires " + std::to_string(g.element_count())});
        }
        if (li > 0) {
            const auto& prev = vol.layers[li - 1].geom;
            if (g.layer_id <= prev.layer_id) {
                out.push_back({where, "layer ids must be strictly increasing"});
            }
            if (g.stride_px < prev.stride_px) {
                out.push_back({where, "stride decreases relative to layer " + std::to_string(prev.layer_id)});
            }
        }
        const std::size_t n = std::min(layer.values.size(), g.element_count());
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(layer.values[i])) {
                const std::size_t slice = i / g.slice_size();
                const std::size_t rem = i % g.slice_size();
                out.push_back({where + ", slice " + std::to_string(slice) + ", row " +
                                   std::to_string(rem / g.width) + ", column " + std::to_string(rem % g.width),
                               "non-finite activation"});
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// FVOL1 binary format, little-endian.

inline constexpr std::string_view kFvolMagic{"FVOL1\0", 6};

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
        }
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(std::string_view s) { bytes_.append(s); }
    const std::string& bytes() const { return bytes_; }

private:
    std::string bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    bool has(std::size_t n) const { return data_.size() - pos_ >= n; }
    std::size_t remaining() const { return data_.size() - pos_; }

    std::uint32_t u32(const std::string& what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }
    float f32(const std::string& what) { return std::bit_cast<float>(u32(what)); }
    std::string_view raw(std::size_t n, const std::string& what) {
        need(n, what);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n, const std::string& what) const {
        if (!has(n)) {
            throw FormatError("truncated FVOL1 payload while reading " + what);
        }
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string encode_volume(const FeatureVolume& vol) {
    detail::ByteWriter w;
    w.raw(kFvolMagic);
    w.u32(static_cast<std::uint32_t>(vol.layers.size()));
    w.u32(vol.image_width_px);
    w.u32(vol.image_height_px);
    w.u32(static_cast<std::uint32_t>(vol.image_id.size()));
    w.raw(vol.image_id);
    for (const auto& layer : vol.layers) {
        const auto& g = layer.geom;
        if (layer.values.size() != g.element_count()) {
            throw ContractError("layer " + std::to_string(g.layer_id) + " tensor size does not match geometry");
        }
        w.u32(g.layer_id);
        w.u32(g.channels);
        w.u32(g.height);
        w.u32(g.width);
        w.f32(g.stride_px);
        w.f32(g.rf_size_px);
        w.f32(g.offset_px);
        for (float v : layer.values) {
            w.f32(v);
        }
    }
    return w.bytes();
}

inline FeatureVolume decode_volume(std::string_view data) {
    detail::ByteReader r(data);
    if (!r.has(kFvolMagic.size()) || r.raw(kFvolMagic.size(), "magic") != kFvolMagic) {
        throw FormatError("bad magic: not an FVOL1 file");
    }
    FeatureVolume vol;
    const std::uint32_t layer_count = r.u32("layer count");
    vol.image_width_px = r.u32("image width");
    vol.image_height_px = r.u32("image height");
    const std::uint32_t id_len = r.u32("image id length");
    vol.image_id = std::string(r.raw(id_len, "image id"));
    vol.layers.reserve(std::min<std::uint32_t>(layer_count, 64));
    for (std::uint32_t li = 0; li < layer_count; ++li) {
        const std::string what = "layer #" + std::to_string(li) + " of " + std::to_string(layer_count);
        FeatureLayer layer;
        auto& g = layer.geom;
        g.layer_id = r.u32(what + " header");
        g.channels = r.u32(what + " header");
        g.height = r.u32(what + " header");
        g.width = r.u32(what + " header");
        g.stride_px = r.f32(what + " header");
        g.rf_size_px = r.f32(what + " header");
        g.offset_px = r.f32(what + " header");
        if (g.channels == 0 || g.height == 0 || g.width == 0) {
            throw FormatError("dimension mismatch in layer " + std::to_string(g.layer_id) +
                              ": zero-sized tensor");
        }
        const std::uint64_t count = std::uint64_t{g.channels} * g.height * g.width;
        if (count > r.remaining() / 4) {
            throw FormatError("truncated FVOL1 payload in layer " + std::to_string(g.layer_id) + " (" + what +
                              "): tensor needs " + std::to_string(count) + " values");
        }
        layer.values.resize(count);
        for (auto& v : layer.values) {
            v = r.f32(what + " tensor");
        }
        vol.layers.push_back(std::move(layer));
    }
    if (r.remaining() != 0) {
        throw FormatError("dimension mismatch: " + std::to_string(r.remaining()) +
                          " trailing bytes after last layer");
    }
    return vol;
}

inline void save_volume(const FeatureVolume& vol, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    const std::string bytes = encode_volume(vol);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline FeatureVolume load_volume(const std::filesystem::path& path) {
    return decode_volume(read_file(path));
}

} // namespace aogparts
