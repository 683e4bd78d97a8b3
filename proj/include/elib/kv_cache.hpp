#pragma once

#include <cstdint>
#include <vector>

#include "elib/error.hpp"
#include "elib/fp16.hpp"
#include "elib/model.hpp"

namespace elib {

/// Pre-allocated per-layer key/value buffers with a monotone fill position.
/// Layout per layer: [batch][capacity][n_kv_heads][head_dim], `databyte` bytes
/// per element (4 = f32, 2 = f16).
class KvCache {
public:
    static KvCache allocate(const ModelSpec& spec, uint32_t batch, uint32_t capacity,
                            uint32_t databyte = 4) {
        spec.validate();
        if (batch == 0) throw Error("kv cache: batch must be >= 1");
        if (capacity > spec.max_seq) {
            throw CapacityError("kv cache: capacity exceeds model max_seq");
        }
        if (databyte != 2 && databyte != 4) {
            throw Error("kv cache: databyte must be 2 or 4");
        }
        KvCache kv;
        kv.batch_ = batch;
        kv.capacity_ = capacity;
        kv.databyte_ = databyte;
        kv.n_layers_ = spec.n_layers;
        kv.n_kv_heads_ = spec.n_kv_heads;
        kv.head_dim_ = spec.head_dim();
        const uint64_t per_layer = static_cast<uint64_t>(batch) * capacity * kv.n_kv_heads_ *
                                   kv.head_dim_ * databyte;
        kv.keys_.assign(spec.n_layers, std::vector<uint8_t>(per_layer, 0));
        kv.values_.assign(spec.n_layers, std::vector<uint8_t>(per_layer, 0));
        return kv;
    }

    uint32_t batch() const { return batch_; }
    uint32_t capacity() const { return capacity_; }
    uint32_t databyte() const { return databyte_; }
    uint32_t position() const { return position_; }
    uint32_t head_dim() const { return head_dim_; }
    uint32_t n_kv_heads() const { return n_kv_heads_; }

    uint64_t total_bytes() const {
        uint64_t total = 0;
        for (const auto& b : keys_) total += b.size();
        for (const auto& b : values_) total += b.size();
        return total;
    }

    void advance() {
        if (position_ >= capacity_) throw CapacityError("kv cache: cache full");
        ++position_;
    }

    /// Store one token's key or value row (n_kv_heads * head_dim floats),
    /// batch index 0.
    void write_row(bool key, uint32_t layer, uint32_t pos, const float* src) {
        if (pos >= capacity_) throw CapacityError("kv cache: position out of range");
        uint8_t* dst = buffer(key, layer).data() + row_offset(pos);
        const size_t n = static_cast<size_t>(n_kv_heads_) * head_dim_;
        if (databyte_ == 4) {
            std::memcpy(dst, src, n * 4);
        } else {
            for (size_t i = 0; i < n; ++i) {
                detail::store_u16(dst + i * 2, f32_to_f16(src[i]));
            }
        }
    }

    float at(bool key, uint32_t layer, uint32_t pos, uint32_t kv_head, uint32_t d) const {
        const uint8_t* src = buffer(key, layer).data() + row_offset(pos) +
                             (static_cast<size_t>(kv_head) * head_dim_ + d) * databyte_;
        if (databyte_ == 4) {
            float v;
            std::memcpy(&v, src, 4);
            return v;
        }
        return f16_to_f32(detail::load_u16(src));
    }

private:
    size_t row_offset(uint32_t pos) const {
        return static_cast<size_t>(pos) * n_kv_heads_ * head_dim_ * databyte_;
    }
    std::vector<uint8_t>& buffer(bool key, uint32_t layer) {
        return key ? keys_.at(layer) : values_.at(layer);
    }
    const std::vector<uint8_t>& buffer(bool key, uint32_t layer) const {
        return key ? keys_.at(layer) : values_.at(layer);
    }

    uint32_t batch_ = 1;
    uint32_t capacity_ = 0;
    uint32_t databyte_ = 4;
    uint32_t n_layers_ = 0;
    uint32_t n_kv_heads_ = 0;
    uint32_t head_dim_ = 0;
    uint32_t position_ = 0;
    std::vector<std::vector<uint8_t>> keys_;
    std::vector<std::vector<uint8_t>> values_;
};

inline KvCache allocate_kv_cache(const ModelSpec& spec, uint32_t batch, uint32_t capacity,
                                 uint32_t databyte = 4) {
    return KvCache::allocate(spec, batch, capacity, databyte);
}

}  // namespace elib
