#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bvod/error.hpp"
#include "bvod/imagegen.hpp"
#include "bvod/selection.hpp"
#include "bvod/tensor.hpp"
#include "bvod/vae.hpp"

namespace bvod {

inline constexpr char kContainerMagic[4] = {'B', 'V', 'O', 'D'};
inline constexpr std::uint32_t kContainerVersion = 1;

/// Little-endian byte assembly for container payloads.
class ByteWriter {
public:
    const std::vector<std::uint8_t>& bytes() const { return buf_; }

    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }

    void tensor(const Tensor& t) {
        u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape) u32(static_cast<std::uint32_t>(d));
        for (double v : t.data) f64(v);
    }

    void raw(const std::vector<std::uint8_t>& payload) {
        buf_.insert(buf_.end(), payload.begin(), payload.end());
    }

private:
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian decoding. Every read validates the remaining
/// length before touching the buffer.
class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
    explicit ByteReader(const std::vector<std::uint8_t>& buf)
        : ByteReader(buf.data(), buf.size()) {}

    std::size_t remaining() const { return size_ - pos_; }
    bool done() const { return pos_ == size_; }

    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::string str() {
        const std::uint32_t len = u32();
        need(len);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), len);
        pos_ += len;
        return s;
    }

    Tensor tensor() {
        const std::uint32_t rank = u32();
        if (rank > 8) throw ContainerError("tensor rank " + std::to_string(rank) + " too large");
        std::vector<std::size_t> shape(rank);
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape[i] = u32();
            if (shape[i] == 0) throw ContainerError("tensor dimension of zero");
            if (n > SIZE_MAX / shape[i]) throw ContainerError("tensor size overflow");
            n *= shape[i];
        }
        need(n * 8);
        std::vector<double> data(n);
        for (std::size_t i = 0; i < n; ++i) data[i] = f64();
        return Tensor(std::move(shape), std::move(data));
    }

    std::vector<std::uint8_t> raw(std::size_t len) {
        need(len);
        std::vector<std::uint8_t> out(data_ + pos_, data_ + pos_ + len);
        pos_ += len;
        return out;
    }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw ContainerError("container truncated: need " +
                                                  std::to_string(n) + " bytes, have " +
                                                  std::to_string(remaining()));
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

struct ContainerSection {
    std::string name;
    std::vector<std::uint8_t> payload;
};

/// Assembles a complete container image: magic, version, section count, then
/// each section as name and length-prefixed payload.
inline std::vector<std::uint8_t> write_container(const std::vector<ContainerSection>& sections) {
    ByteWriter w;
    for (char c : kContainerMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u32(kContainerVersion);
    w.u32(static_cast<std::uint32_t>(sections.size()));
    for (const ContainerSection& s : sections) {
        w.str(s.name);
        w.u64(s.payload.size());
        w.raw(s.payload);
    }
    return w.bytes();
}

/// Parses and fully validates a container image. Magic and version are
/// checked before anything else; truncation and trailing bytes are rejected.
inline std::vector<ContainerSection> read_container(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    char magic[4];
    for (char& c : magic) c = static_cast<char>(r.u8());
    if (!std::equal(magic, magic + 4, kContainerMagic))
        throw ContainerError("bad magic: not a BVOD container");
    const std::uint32_t version = r.u32();
    if (version != kContainerVersion)
        throw ContainerError("unsupported container version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    std::vector<ContainerSection> sections;
    sections.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ContainerSection s;
        s.name = r.str();
        const std::uint64_t len = r.u64();
        s.payload = r.raw(static_cast<std::size_t>(len));
        sections.push_back(std::move(s));
    }
    if (!r.done()) throw ContainerError("trailing bytes after last section");
    return sections;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ContainerError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ContainerError("write to '" + path + "' failed");
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContainerError("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (in.bad()) throw ContainerError("read from '" + path + "' failed");
    return bytes;
}

namespace detail {

inline const ContainerSection& find_section(const std::vector<ContainerSection>& sections,
                                            const std::string& name) {
    for (const ContainerSection& s : sections)
        if (s.name == name) return s;
    throw ContainerError("missing container section '" + name + "'");
}

inline void expect_kind(const std::vector<ContainerSection>& sections,
                        const std::string& want) {
    ByteReader r(find_section(sections, "kind").payload);
    const std::string kind = r.str();
    if (!r.done()) throw ContainerError("malformed kind section");
    if (kind != want)
        throw ContainerError("container holds '" + kind + "', expected '" + want + "'");
}

inline ContainerSection kind_section(const std::string& kind) {
    ByteWriter w;
    w.str(kind);
    return {"kind", w.bytes()};
}

inline void encode_model(ByteWriter& w, const VaeModel& m) {
    const VaeConfig& c = m.config;
    w.u64(c.n_latent);
    w.f64(c.beta);
    w.u32(static_cast<std::uint32_t>(c.hidden.size()));
    for (std::size_t h : c.hidden) w.u64(h);
    w.f64(c.learning_rate);
    w.u64(c.epochs);
    w.u64(c.batch_size);
    w.u64(c.seed);
    const std::vector<NodePtr> params = m.params();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const NodePtr& p : params) {
        w.str(p->name);
        w.tensor(p->value);
    }
}

inline VaeModel decode_model(ByteReader& r) {
    VaeConfig cfg;
    cfg.n_latent = static_cast<std::size_t>(r.u64());
    cfg.beta = r.f64();
    const std::uint32_t n_hidden = r.u32();
    cfg.hidden.clear();
    for (std::uint32_t i = 0; i < n_hidden; ++i)
        cfg.hidden.push_back(static_cast<std::size_t>(r.u64()));
    cfg.learning_rate = r.f64();
    cfg.epochs = static_cast<std::size_t>(r.u64());
    cfg.batch_size = static_cast<std::size_t>(r.u64());
    cfg.seed = r.u64();

    VaeModel m = init_vae(cfg);
    std::vector<NodePtr> params = m.params();
    const std::uint32_t n_params = r.u32();
    if (n_params != params.size())
        throw ContainerError("model parameter count " + std::to_string(n_params) +
                             " does not match layout (" + std::to_string(params.size()) + ")");
    for (std::uint32_t i = 0; i < n_params; ++i) {
        const std::string name = r.str();
        const Tensor value = r.tensor();
        bool matched = false;
        for (const NodePtr& p : params) {
            if (p->name != name) continue;
            if (!p->value.same_shape(value))
                throw ContainerError("parameter '" + name + "' has shape " +
                                     value.shape_str() + ", layout expects " +
                                     p->value.shape_str());
            p->value = value;
            matched = true;
            break;
        }
        if (!matched) throw ContainerError("unknown model parameter '" + name + "'");
    }
    return m;
}

}  // namespace detail

// ---- dataset ----

inline std::vector<std::uint8_t> serialize_dataset(const Dataset& images) {
    ByteWriter w;
    w.u64(images.size());
    for (const LabeledImage& img : images) {
        w.i64(img.scene_id);
        w.u32(static_cast<std::uint32_t>(img.labels.size()));
        for (const auto& [factor, value] : img.labels) {
            w.str(factor);
            w.str(value);
        }
        w.tensor(img.pixels);
    }
    return write_container({detail::kind_section("dataset"), {"images", w.bytes()}});
}

inline Dataset deserialize_dataset(const std::vector<std::uint8_t>& bytes) {
    const std::vector<ContainerSection> sections = read_container(bytes);
    detail::expect_kind(sections, "dataset");
    ByteReader r(detail::find_section(sections, "images").payload);
    const std::uint64_t count = r.u64();
    Dataset images;
    images.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        LabeledImage img;
        img.scene_id = r.i64();
        const std::uint32_t n_labels = r.u32();
        for (std::uint32_t j = 0; j < n_labels; ++j) {
            const std::string factor = r.str();
            img.labels[factor] = r.str();
        }
        img.pixels = r.tensor();
        if (img.pixels.size() != kImagePixels)
            throw ContainerError("image " + std::to_string(i) + " has shape " +
                                 img.pixels.shape_str() + ", expected 32x32");
        images.push_back(std::move(img));
    }
    if (!r.done()) throw ContainerError("trailing bytes in images section");
    return images;
}

inline void save_dataset(const std::string& path, const Dataset& images) {
    write_file(path, serialize_dataset(images));
}

inline Dataset load_dataset(const std::string& path) {
    return deserialize_dataset(read_file(path));
}

/// Which factor a partition monitors and its in-distribution value.
struct PartitionMeta {
    std::string factor;
    std::string in_distribution;
};

/// Dataset container with an extra section recording the partition layout,
/// so later stages can recover the monitored factor from the file alone.
inline std::vector<std::uint8_t> serialize_dataset_with_meta(const Dataset& images,
                                                             const PartitionMeta& meta) {
    ByteWriter images_w;
    images_w.u64(images.size());
    for (const LabeledImage& img : images) {
        images_w.i64(img.scene_id);
        images_w.u32(static_cast<std::uint32_t>(img.labels.size()));
        for (const auto& [factor, value] : img.labels) {
            images_w.str(factor);
            images_w.str(value);
        }
        images_w.tensor(img.pixels);
    }
    ByteWriter meta_w;
    meta_w.str(meta.factor);
    meta_w.str(meta.in_distribution);
    return write_container({detail::kind_section("dataset"),
                            {"images", images_w.bytes()},
                            {"partition", meta_w.bytes()}});
}

inline void save_dataset_with_meta(const std::string& path, const Dataset& images,
                                   const PartitionMeta& meta) {
    write_file(path, serialize_dataset_with_meta(images, meta));
}

/// Reads the partition section of a dataset file, if one was recorded.
inline std::optional<PartitionMeta> load_dataset_meta(const std::string& path) {
    const std::vector<ContainerSection> sections = read_container(read_file(path));
    detail::expect_kind(sections, "dataset");
    for (const ContainerSection& s : sections) {
        if (s.name != "partition") continue;
        ByteReader r(s.payload);
        PartitionMeta meta;
        meta.factor = r.str();
        meta.in_distribution = r.str();
        if (!r.done()) throw ContainerError("malformed partition section");
        return meta;
    }
    return std::nullopt;
}

// ---- model ----

inline std::vector<std::uint8_t> serialize_model(const VaeModel& m) {
    ByteWriter w;
    detail::encode_model(w, m);
    return write_container({detail::kind_section("vae-model"), {"model", w.bytes()}});
}

inline VaeModel deserialize_model(const std::vector<std::uint8_t>& bytes) {
    const std::vector<ContainerSection> sections = read_container(bytes);
    detail::expect_kind(sections, "vae-model");
    ByteReader r(detail::find_section(sections, "model").payload);
    VaeModel m = detail::decode_model(r);
    if (!r.done()) throw ContainerError("trailing bytes in model section");
    return m;
}

inline void save_model(const std::string& path, const VaeModel& m) {
    write_file(path, serialize_model(m));
}

inline VaeModel load_model(const std::string& path) {
    return deserialize_model(read_file(path));
}

// ---- detector specs ----

/// Serializes a set of calibrated detectors, each with its model embedded, so
/// one file is enough to run the chain later.
inline std::vector<std::uint8_t> serialize_detectors(const std::vector<DetectorSpec>& specs) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(specs.size()));
    for (const DetectorSpec& s : specs) {
        if (!s.model) throw ContainerError("detector for '" + s.factor + "' has no model");
        w.str(s.factor);
        w.u64(s.latent_index);
        w.f64(s.tau);
        w.u32(static_cast<std::uint32_t>(s.percentile));
        w.f64(s.beta);
        w.u64(s.n_latent);
        detail::encode_model(w, *s.model);
    }
    return write_container({detail::kind_section("detectors"), {"detectors", w.bytes()}});
}

inline std::vector<DetectorSpec> deserialize_detectors(const std::vector<std::uint8_t>& bytes) {
    const std::vector<ContainerSection> sections = read_container(bytes);
    detail::expect_kind(sections, "detectors");
    ByteReader r(detail::find_section(sections, "detectors").payload);
    const std::uint32_t count = r.u32();
    std::vector<DetectorSpec> specs;
    specs.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        DetectorSpec s;
        s.factor = r.str();
        s.latent_index = static_cast<std::size_t>(r.u64());
        s.tau = r.f64();
        s.percentile = static_cast<int>(r.u32());
        s.beta = r.f64();
        s.n_latent = static_cast<std::size_t>(r.u64());
        s.model = std::make_shared<VaeModel>(detail::decode_model(r));
        specs.push_back(std::move(s));
    }
    if (!r.done()) throw ContainerError("trailing bytes in detectors section");
    return specs;
}

inline void save_detectors(const std::string& path, const std::vector<DetectorSpec>& specs) {
    write_file(path, serialize_detectors(specs));
}

inline std::vector<DetectorSpec> load_detectors(const std::string& path) {
    return deserialize_detectors(read_file(path));
}

}  // namespace bvod
