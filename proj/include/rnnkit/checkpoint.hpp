// Flat named-tensor checkpoint container.
//
// Byte layout (all integers little-endian, all floats IEEE-754 little-endian):
//
//   bytes 0..3   magic "RKCP"
//   u32          version (1)
//   u64          manifest length, then that many bytes of UTF-8 JSON
//   u64          tensor count
//   per tensor:
//     u64        name length, then the name bytes
//     u8         dtype: 0 = float32, 1 = float64
//     u8         rank (1..3)
//     u32 x rank dims
//     data       numel * dtype size
//
// The manifest of a model checkpoint is its serialized ModelSpec.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rnnkit/models.hpp"
#include "rnnkit/tensor.hpp"

namespace rnnkit {

namespace detail {

inline void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
struct bits_of;
template <> struct bits_of<std::uint8_t> { using type = std::uint8_t; };
template <> struct bits_of<std::uint32_t> { using type = std::uint32_t; };
template <> struct bits_of<std::uint64_t> { using type = std::uint64_t; };
template <> struct bits_of<float> { using type = std::uint32_t; };
template <> struct bits_of<double> { using type = std::uint64_t; };

template <typename T>
void write_le(std::ofstream& out, T v) {
    typename bits_of<T>::type bits;
    std::memcpy(&bits, &v, sizeof(T));
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
        buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    write_bytes(out, buf, sizeof(T));
}

inline void read_bytes(std::ifstream& in, void* p, std::size_t n, const std::string& path) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw std::runtime_error("checkpoint: truncated file '" + path + "'");
}

template <typename T>
T read_le(std::ifstream& in, const std::string& path) {
    unsigned char buf[sizeof(T)];
    read_bytes(in, buf, sizeof(T), path);
    typename bits_of<T>::type bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        bits |= static_cast<typename bits_of<T>::type>(buf[i]) << (8 * i);
    T v;
    std::memcpy(&v, &bits, sizeof(T));
    return v;
}

template <typename S>
constexpr std::uint8_t dtype_code() {
    return sizeof(S) == 4 ? 0 : 1;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const std::string& manifest,
                     const std::vector<std::pair<std::string, Tensor<S>>>& tensors) {
    static_assert(sizeof(S) == 4 || sizeof(S) == 8, "checkpoint supports float32/float64 tensors");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    detail::write_bytes(out, "RKCP", 4);
    detail::write_le<std::uint32_t>(out, 1);
    detail::write_le<std::uint64_t>(out, manifest.size());
    detail::write_bytes(out, manifest.data(), manifest.size());
    detail::write_le<std::uint64_t>(out, tensors.size());
    for (const auto& [name, t] : tensors) {
        detail::write_le<std::uint64_t>(out, name.size());
        detail::write_bytes(out, name.data(), name.size());
        detail::write_le<std::uint8_t>(out, detail::dtype_code<S>());
        detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
        for (int d : t.shape()) detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (S v : t.data()) detail::write_le<S>(out, v);
    }
    if (!out) throw std::runtime_error("checkpoint: write failure on '" + path + "'");
}

template <typename S>
struct Checkpoint {
    std::string manifest;
    std::vector<std::pair<std::string, Tensor<S>>> tensors;
};

template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[4];
    detail::read_bytes(in, magic, 4, path);
    if (std::memcmp(magic, "RKCP", 4) != 0)
        throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file");
    const auto version = detail::read_le<std::uint32_t>(in, path);
    if (version != 1)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint<S> ck;
    const auto mlen = detail::read_le<std::uint64_t>(in, path);
    ck.manifest.resize(mlen);
    detail::read_bytes(in, ck.manifest.data(), mlen, path);
    const auto count = detail::read_le<std::uint64_t>(in, path);
    for (std::uint64_t k = 0; k < count; ++k) {
        const auto nlen = detail::read_le<std::uint64_t>(in, path);
        std::string name(nlen, '\0');
        detail::read_bytes(in, name.data(), nlen, path);
        const auto dtype = detail::read_le<std::uint8_t>(in, path);
        if (dtype != detail::dtype_code<S>())
            throw std::runtime_error("checkpoint: tensor '" + name + "' has dtype code " +
                                     std::to_string(dtype) + ", expected " +
                                     std::to_string(detail::dtype_code<S>()));
        const auto rank = detail::read_le<std::uint8_t>(in, path);
        if (rank < 1 || rank > 3)
            throw std::runtime_error("checkpoint: tensor '" + name + "' has unsupported rank");
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<int>(detail::read_le<std::uint32_t>(in, path));
        std::vector<S> values(shape_numel(shape));
        for (auto& v : values) v = detail::read_le<S>(in, path);
        ck.tensors.emplace_back(std::move(name), Tensor<S>::from(shape, std::move(values)));
    }
    return ck;
}

// ---------------------------------------------------------------------------
// ModelSpec manifest
// ---------------------------------------------------------------------------

inline nlohmann::json spec_to_json(const ModelSpec& s) {
    nlohmann::json j;
    j["family"] = to_string(s.family);
    j["variant"] = to_string(s.variant);
    j["vocab_size"] = s.vocab_size;
    j["embed_size"] = s.embed_size;
    j["alpha"] = s.alpha;
    if (s.family == ModelFamily::Hred) {
        j["sizes"] = {s.hred.sentence, s.hred.dialogue, s.hred.decoder};
    } else {
        j["sizes"] = {s.rnet.char_level, s.rnet.encode, s.rnet.match, s.rnet.self_match};
        j["char_vocab_size"] = s.char_vocab_size;
        j["char_embed_size"] = s.char_embed_size;
    }
    return j;
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    const std::string family = j.at("family").get<std::string>();
    if (family == "hred")
        s.family = ModelFamily::Hred;
    else if (family == "rnet")
        s.family = ModelFamily::Rnet;
    else
        throw std::invalid_argument("model spec: unknown family '" + family + "'");
    const std::string variant = j.at("variant").get<std::string>();
    if (variant == "baseline")
        s.variant = Variant::Baseline;
    else if (variant == "simplified")
        s.variant = Variant::Simplified;
    else
        throw std::invalid_argument("model spec: unknown variant '" + variant + "'");
    s.vocab_size = j.at("vocab_size").get<int>();
    s.embed_size = j.at("embed_size").get<int>();
    s.alpha = j.value("alpha", 0.9);
    const auto sizes = j.at("sizes").get<std::vector<int>>();
    if (s.family == ModelFamily::Hred) {
        if (sizes.size() != 3)
            throw std::invalid_argument("model spec: hierarchical model needs 3 layer sizes");
        s.hred = {sizes[0], sizes[1], sizes[2]};
    } else {
        if (sizes.size() != 4)
            throw std::invalid_argument("model spec: span reader needs 4 layer sizes");
        s.rnet = {sizes[0], sizes[1], sizes[2], sizes[3]};
        s.char_vocab_size = j.at("char_vocab_size").get<int>();
        s.char_embed_size = j.at("char_embed_size").get<int>();
    }
    return s;
}

template <typename S, typename Model>
void save_model(const std::string& path, const Model& model) {
    save_checkpoint<S>(path, spec_to_json(model.spec()).dump(), model.named_params());
}

namespace detail {

template <typename S, typename Model>
Model rebuild_from(const Checkpoint<S>& ck) {
    const ModelSpec spec = spec_from_json(nlohmann::json::parse(ck.manifest));
    std::mt19937 rng(0);  // weights are overwritten below
    Model model = Model::build(spec, rng);
    auto params = model.named_params();
    if (params.size() != ck.tensors.size())
        throw std::runtime_error("checkpoint: tensor count mismatch against the manifest spec");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [want_name, dst] = params[i];
        const auto& [got_name, src] = ck.tensors[i];
        if (want_name != got_name)
            throw std::runtime_error("checkpoint: expected tensor '" + want_name + "', found '" +
                                     got_name + "'");
        if (dst.shape() != src.shape())
            throw std::runtime_error("checkpoint: tensor '" + got_name + "' has shape " +
                                     shape_str(src.shape()) + ", expected " + shape_str(dst.shape()));
        std::copy(src.data().begin(), src.data().end(), dst.data().begin());
    }
    return model;
}

}  // namespace detail

template <typename S>
HredModel<S> load_hred(const std::string& path) {
    return detail::rebuild_from<S, HredModel<S>>(load_checkpoint<S>(path));
}

template <typename S>
RnetModel<S> load_rnet(const std::string& path) {
    return detail::rebuild_from<S, RnetModel<S>>(load_checkpoint<S>(path));
}

}  // namespace rnnkit
