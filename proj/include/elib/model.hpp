#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <future>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "elib/error.hpp"
#include "elib/tensor.hpp"

namespace elib {

struct ModelSpec {
    uint32_t d_model = 0;
    uint32_t n_heads = 0;
    uint32_t n_kv_heads = 0;
    uint32_t n_layers = 0;
    uint32_t d_ff = 0;
    uint32_t vocab_size = 0;
    uint32_t max_seq = 0;
    float rope_base = 10000.0f;

    uint32_t head_dim() const { return d_model / n_heads; }
    uint32_t kv_dim() const { return head_dim() * n_kv_heads; }

    void validate() const {
        if (d_model == 0 || n_heads == 0 || n_kv_heads == 0 || n_layers == 0 ||
            d_ff == 0 || vocab_size == 0 || max_seq == 0) {
            throw SpecError("model spec: all dimensions must be positive");
        }
        if (d_model % n_heads != 0) {
            throw SpecError("model spec: d_model must be divisible by n_heads");
        }
        if (n_heads % n_kv_heads != 0) {
            throw SpecError("model spec: n_heads must be divisible by n_kv_heads");
        }
        if (!(rope_base > 0.0f)) {
            throw SpecError("model spec: rope_base must be positive");
        }
    }

    bool operator==(const ModelSpec&) const = default;
};

/// Desk-scale reference configuration.
inline ModelSpec tiny_spec() {
    ModelSpec s;
    s.d_model = 64;
    s.n_heads = 4;
    s.n_kv_heads = 4;
    s.n_layers = 4;
    s.d_ff = 176;
    s.vocab_size = 259;
    s.max_seq = 256;
    s.rope_base = 10000.0f;
    return s;
}

struct Model {
    ModelSpec spec;
    Scheme scheme = Scheme::F32;
    std::vector<Tensor> tensors;  // fixed directory order
    uint64_t param_bytes = 0;     // total serialized weight bytes

    const Tensor& tensor(const std::string& name) const {
        for (const Tensor& t : tensors) {
            if (t.name == name) return t;
        }
        throw ValidationError("missing tensor: " + name);
    }

    /// Bytes held by tensors that actually carry the quantized scheme.
    uint64_t quantized_payload_bytes() const {
        uint64_t total = 0;
        for (const Tensor& t : tensors) {
            if (t.scheme == scheme && scheme != Scheme::F32) total += t.payload_bytes();
        }
        return total;
    }

    uint64_t recompute_param_bytes() const {
        uint64_t total = 0;
        for (const Tensor& t : tensors) total += t.payload_bytes();
        return total;
    }
};

namespace detail {

struct TensorDecl {
    std::string name;
    std::vector<uint32_t> dims;
    bool quantizable;  // 2-D matmul weight that follows the model's scheme
};

inline std::vector<TensorDecl> tensor_directory(const ModelSpec& s) {
    std::vector<TensorDecl> decls;
    decls.push_back({"tok_embeddings.weight", {s.vocab_size, s.d_model}, true});
    for (uint32_t i = 0; i < s.n_layers; ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        decls.push_back({p + "attention_norm.weight", {s.d_model}, false});
        decls.push_back({p + "wq.weight", {s.d_model, s.d_model}, true});
        decls.push_back({p + "wk.weight", {s.kv_dim(), s.d_model}, true});
        decls.push_back({p + "wv.weight", {s.kv_dim(), s.d_model}, true});
        decls.push_back({p + "wo.weight", {s.d_model, s.d_model}, true});
        decls.push_back({p + "ffn_norm.weight", {s.d_model}, false});
        decls.push_back({p + "ffn_gate.weight", {s.d_ff, s.d_model}, true});
        decls.push_back({p + "ffn_up.weight", {s.d_ff, s.d_model}, true});
        // stored transposed ({d_ff, d_model}) so the innermost dimension stays
        // a multiple of 32 even when d_ff is not; consumed via matvec_t
        decls.push_back({p + "ffn_down.weight", {s.d_ff, s.d_model}, true});
    }
    decls.push_back({"output_norm.weight", {s.d_model}, false});
    // final projection stays f32: weight-only quantization targets the matmul
    // weights that dominate streamed bytes, and the output head is shared with
    // the logit path where precision matters most
    decls.push_back({"output.weight", {s.vocab_size, s.d_model}, false});
    return decls;
}

inline bool tensor_is_quantizable(const ModelSpec& spec, const Tensor& t) {
    for (const TensorDecl& d : tensor_directory(spec)) {
        if (d.name == t.name) return d.quantizable;
    }
    return t.dims.size() == 2 && t.name != "output.weight";
}

}  // namespace detail

inline void validate_model(const Model& m) {
    m.spec.validate();
    for (const auto& decl : detail::tensor_directory(m.spec)) {
        const Tensor& t = m.tensor(decl.name);
        if (t.dims != decl.dims) {
            throw ValidationError("tensor " + decl.name + " has shape inconsistent with model spec");
        }
        if (t.payload_bytes() != Tensor::expected_bytes(t.scheme, t.elements())) {
            throw ValidationError("tensor " + decl.name + " payload size mismatch");
        }
    }
    if (m.param_bytes != m.recompute_param_bytes()) {
        throw ValidationError("param_bytes does not match sum of tensor payloads");
    }
}

namespace detail {

// deterministic uniform in (-1, 1), independent of libstdc++ distribution internals
class WeightRng {
public:
    explicit WeightRng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    float symmetric() {
        const uint64_t x = next();
        const double u = static_cast<double>(x >> 11) * 0x1.0p-53;
        return static_cast<float>(2.0 * u - 1.0);
    }

private:
    uint64_t next() {  // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    uint64_t state_;
};

}  // namespace detail

/// Deterministic seeded model: same (spec, seed) always yields identical bytes.
inline Model generate_model(const ModelSpec& spec, uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    m.scheme = Scheme::F32;
    detail::WeightRng rng(seed);
    const float proj_scale = 1.0f / std::sqrt(static_cast<float>(spec.d_model));
    for (const auto& decl : detail::tensor_directory(spec)) {
        Tensor t = make_f32_tensor(decl.name, decl.dims);
        float* w = t.f32();
        const size_t n = t.elements();
        const bool is_norm = decl.dims.size() == 1;
        for (size_t i = 0; i < n; ++i) {
            if (is_norm) {
                w[i] = 1.0f + 0.1f * rng.symmetric();
            } else {
                w[i] = proj_scale * rng.symmetric();
            }
        }
        m.tensors.push_back(std::move(t));
    }
    m.param_bytes = m.recompute_param_bytes();
    return m;
}

/// Re-encode every quantizable weight under `scheme`. Norm gains and the
/// output projection stay f32. Tensors are processed in parallel; output
/// order stays the directory order.
inline Model quantize_model(const Model& source, Scheme scheme) {
    if (scheme == Scheme::F32) {
        Model copy = source;
        copy.scheme = Scheme::F32;
        copy.param_bytes = copy.recompute_param_bytes();
        return copy;
    }
    Model out;
    out.spec = source.spec;
    out.scheme = scheme;
    out.tensors.resize(source.tensors.size());

    std::vector<std::future<void>> jobs;
    jobs.reserve(source.tensors.size());
    for (size_t i = 0; i < source.tensors.size(); ++i) {
        jobs.push_back(std::async(std::launch::async, [&, i] {
            const Tensor& src = source.tensors[i];
            if (detail::tensor_is_quantizable(source.spec, src)) {
                out.tensors[i] = quantize_tensor(src, scheme);
            } else {
                out.tensors[i] = src;
            }
        }));
    }
    for (auto& j : jobs) j.get();
    out.param_bytes = out.recompute_param_bytes();
    return out;
}

// ---------------------------------------------------------------------------
// ELIB container, little-endian:
//   magic "ELIB" | version u32 | spec (8 x u32, last reserved) | rope_base f32
//   | scheme u8 | tensor count u32
//   | directory { name len u16, name bytes, rank u8, dims u32[], scheme u8,
//                 payload offset u64, payload bytes u64 }
//   | payloads, each 32-byte aligned from file start
// ---------------------------------------------------------------------------

inline constexpr uint32_t kContainerVersion = 1;
inline constexpr char kContainerMagic[4] = {'E', 'L', 'I', 'B'};

namespace detail {

struct ByteWriter {
    std::vector<uint8_t> buf;
    void u8(uint8_t v) { buf.push_back(v); }
    void u16(uint16_t v) {
        buf.push_back(static_cast<uint8_t>(v & 0xff));
        buf.push_back(static_cast<uint8_t>(v >> 8));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
    }
    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
    void bytes(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
};

struct ByteReader {
    const uint8_t* p;
    const uint8_t* end;
    void need(size_t n) const {
        if (static_cast<size_t>(end - p) < n) throw IoError("truncated model file");
    }
    uint8_t u8() { need(1); return *p++; }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(p[0] | (p[1] << 8));
        p += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
        p += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
        p += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
};

}  // namespace detail

inline void write_model(const Model& m, const std::string& path) {
    detail::ByteWriter w;
    w.bytes(kContainerMagic, 4);
    w.u32(kContainerVersion);
    w.u32(m.spec.d_model);
    w.u32(m.spec.n_heads);
    w.u32(m.spec.n_kv_heads);
    w.u32(m.spec.n_layers);
    w.u32(m.spec.d_ff);
    w.u32(m.spec.vocab_size);
    w.u32(m.spec.max_seq);
    w.u32(0);  // reserved
    w.f32(m.spec.rope_base);
    w.u8(static_cast<uint8_t>(m.scheme));
    w.u32(static_cast<uint32_t>(m.tensors.size()));

    // directory size must be known before offsets can be assigned
    size_t dir_bytes = 0;
    for (const Tensor& t : m.tensors) {
        dir_bytes += 2 + t.name.size() + 1 + 4 * t.dims.size() + 1 + 8 + 8;
    }
    uint64_t offset = w.buf.size() + dir_bytes;
    std::vector<uint64_t> offsets;
    for (const Tensor& t : m.tensors) {
        offset = (offset + 31) / 32 * 32;
        offsets.push_back(offset);
        offset += t.payload_bytes();
    }

    for (size_t i = 0; i < m.tensors.size(); ++i) {
        const Tensor& t = m.tensors[i];
        w.u16(static_cast<uint16_t>(t.name.size()));
        w.bytes(t.name.data(), t.name.size());
        w.u8(static_cast<uint8_t>(t.dims.size()));
        for (uint32_t d : t.dims) w.u32(d);
        w.u8(static_cast<uint8_t>(t.scheme));
        w.u64(offsets[i]);
        w.u64(t.payload_bytes());
    }
    for (size_t i = 0; i < m.tensors.size(); ++i) {
        w.buf.resize(offsets[i], 0);
        w.bytes(m.tensors[i].data.data(), m.tensors[i].data.size());
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
    if (!f) throw IoError("write failed: " + path);
}

/// Load a container, returning the model and the wall time spent loading (s).
inline std::pair<Model, double> load_model(const std::string& path) {
    const auto t0 = std::chrono::steady_clock::now();
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open model file: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (f.bad()) throw IoError("read failed: " + path);

    detail::ByteReader r{buf.data(), buf.data() + buf.size()};
    r.need(4);
    if (std::memcmp(r.p, kContainerMagic, 4) != 0) {
        throw FormatError("bad magic: not an ELIB model file");
    }
    r.p += 4;
    const uint32_t version = r.u32();
    if (version != kContainerVersion) {
        throw FormatError("unsupported container version " + std::to_string(version));
    }

    Model m;
    m.spec.d_model = r.u32();
    m.spec.n_heads = r.u32();
    m.spec.n_kv_heads = r.u32();
    m.spec.n_layers = r.u32();
    m.spec.d_ff = r.u32();
    m.spec.vocab_size = r.u32();
    m.spec.max_seq = r.u32();
    r.u32();  // reserved
    m.spec.rope_base = r.f32();
    m.scheme = scheme_from_tag(r.u8());
    const uint32_t count = r.u32();

    struct Entry {
        Tensor t;
        uint64_t offset;
        uint64_t nbytes;
    };
    std::vector<Entry> entries;
    entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Entry e;
        const uint16_t name_len = r.u16();
        r.need(name_len);
        e.t.name.assign(reinterpret_cast<const char*>(r.p), name_len);
        r.p += name_len;
        const uint8_t rank = r.u8();
        for (uint8_t d = 0; d < rank; ++d) e.t.dims.push_back(r.u32());
        e.t.scheme = scheme_from_tag(r.u8());
        e.offset = r.u64();
        e.nbytes = r.u64();
        entries.push_back(std::move(e));
    }
    for (Entry& e : entries) {
        if (e.offset + e.nbytes > buf.size()) {
            throw IoError("truncated model file: payload of " + e.t.name + " out of range");
        }
        e.t.data.assign(buf.data() + e.offset, buf.data() + e.offset + e.nbytes);
        m.tensors.push_back(std::move(e.t));
    }
    m.param_bytes = m.recompute_param_bytes();
    validate_model(m);

    const auto t1 = std::chrono::steady_clock::now();
    const double t_load = std::chrono::duration<double>(t1 - t0).count();
    return {std::move(m), t_load};
}

}  // namespace elib
