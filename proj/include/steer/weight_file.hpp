#pragma once

// STWT weight files:
//
//   magic   "STWT"
//   u32     version (= 1)
//   payload:
//     u32 n_layers, u32 d_model, u32 n_heads, u32 d_ff,
//     u32 vocab_size, u32 max_seq, f32 norm_eps
//     u32 tensor_count
//     per tensor: u32 name_len, name bytes,
//                 u32 ndim, u32 dim[ndim], f32 data (little-endian)
//   u64     FNV-1a checksum of the payload bytes
//
// Tensors appear in the fixed for_each_tensor order with exact names and
// shapes; anything else is rejected as a shape mismatch.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "steer/common.hpp"
#include "steer/model.hpp"

namespace steer {

namespace detail {

inline constexpr char kWeightMagic[4] = {'S', 'T', 'W', 'T'};
inline constexpr uint32_t kWeightVersion = 1;

class PayloadWriter {
public:
    template <typename T>
    void put(T v) {
        write_le(os_, v);
    }
    void put_bytes(const void* p, size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void put_name(const std::string& s) {
        put(static_cast<uint32_t>(s.size()));
        put_bytes(s.data(), s.size());
    }
    void put_f32s(const std::vector<float>& v) {
        for (float f : v) put(f);
    }
    std::string str() const { return os_.str(); }

private:
    std::ostringstream os_{std::ios::binary};
};

class PayloadReader {
public:
    PayloadReader(const unsigned char* data, size_t size) : data_(data), size_(size) {}

    template <typename T>
    T take(const char* what) {
        if (off_ + sizeof(T) > size_) truncated(what);
        T v;
        unsigned char buf[sizeof(T)];
        std::memcpy(buf, data_ + off_, sizeof(T));
        if (!host_is_little_endian()) {
            for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
        }
        std::memcpy(&v, buf, sizeof(T));
        off_ += sizeof(T);
        return v;
    }

    std::string take_name() {
        const auto n = take<uint32_t>("name length");
        if (off_ + n > size_) truncated("name");
        std::string s(reinterpret_cast<const char*>(data_ + off_), n);
        off_ += n;
        return s;
    }

    std::vector<float> take_f32s(size_t count, const char* what) {
        if (off_ + count * sizeof(float) > size_) truncated(what);
        std::vector<float> v(count);
        for (size_t i = 0; i < count; ++i) v[i] = take<float>(what);
        return v;
    }

    bool exhausted() const { return off_ == size_; }

private:
    [[noreturn]] void truncated(const char* what) {
        throw Error(ErrorKind::corrupt_payload,
                    std::string("corrupt weight payload: truncated at ") + what);
    }

    const unsigned char* data_;
    size_t size_;
    size_t off_ = 0;
};

inline void write_tensor(PayloadWriter& w, const std::string& name, const Tensor2& t) {
    w.put_name(name);
    w.put(static_cast<uint32_t>(2));
    w.put(static_cast<uint32_t>(t.rows));
    w.put(static_cast<uint32_t>(t.cols));
    w.put_f32s(t.data);
}

inline void write_tensor(PayloadWriter& w, const std::string& name, const std::vector<float>& v) {
    w.put_name(name);
    w.put(static_cast<uint32_t>(1));
    w.put(static_cast<uint32_t>(v.size()));
    w.put_f32s(v);
}

}  // namespace detail

inline void save_model(const Model& m, const std::string& path) {
    detail::PayloadWriter w;
    const auto& c = m.config;
    w.put(static_cast<uint32_t>(c.n_layers));
    w.put(static_cast<uint32_t>(c.d_model));
    w.put(static_cast<uint32_t>(c.n_heads));
    w.put(static_cast<uint32_t>(c.d_ff));
    w.put(static_cast<uint32_t>(c.vocab_size));
    w.put(static_cast<uint32_t>(c.max_seq));
    w.put(c.norm_eps);

    uint32_t count = 0;
    m.for_each_tensor([&](const std::string&, const auto&) { ++count; });
    w.put(count);
    m.for_each_tensor([&](const std::string& name, const auto& t) { detail::write_tensor(w, name, t); });

    const std::string payload = w.str();
    std::ofstream ofs(path, std::ios::binary | std::ios::trunc);
    if (!ofs) throw Error(ErrorKind::io_missing, "cannot write file: " + path);
    ofs.write(detail::kWeightMagic, 4);
    write_le(ofs, detail::kWeightVersion);
    ofs.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    write_le(ofs, fnv1a64(payload.data(), payload.size()));
    if (!ofs) throw Error(ErrorKind::io_missing, "write failed: " + path);
}

inline Model load_model(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 4 + 4 + 8) {
        throw Error(ErrorKind::corrupt_payload, "corrupt weight payload: file too short");
    }
    if (std::memcmp(bytes.data(), detail::kWeightMagic, 4) != 0) {
        throw Error(ErrorKind::bad_magic, "not a STWT weight file: " + path);
    }
    uint32_t version;
    std::memcpy(&version, bytes.data() + 4, 4);
    if (!detail::host_is_little_endian()) {
        version = __builtin_bswap32(version);
    }
    if (version != detail::kWeightVersion) {
        throw Error(ErrorKind::bad_version,
                    "unsupported STWT version " + std::to_string(version));
    }
    const size_t payload_size = bytes.size() - 4 - 4 - 8;
    const unsigned char* payload = bytes.data() + 8;
    uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    if (!detail::host_is_little_endian()) {
        stored = __builtin_bswap64(stored);
    }
    if (fnv1a64(payload, payload_size) != stored) {
        throw Error(ErrorKind::corrupt_payload, "corrupt weight payload: checksum mismatch");
    }

    detail::PayloadReader r(payload, payload_size);
    Model m;
    m.config.n_layers = static_cast<int32_t>(r.take<uint32_t>("n_layers"));
    m.config.d_model = static_cast<int32_t>(r.take<uint32_t>("d_model"));
    m.config.n_heads = static_cast<int32_t>(r.take<uint32_t>("n_heads"));
    m.config.d_ff = static_cast<int32_t>(r.take<uint32_t>("d_ff"));
    m.config.vocab_size = static_cast<int32_t>(r.take<uint32_t>("vocab_size"));
    m.config.max_seq = static_cast<int32_t>(r.take<uint32_t>("max_seq"));
    m.config.norm_eps = r.take<float>("norm_eps");
    m.config.validate();

    const auto count = r.take<uint32_t>("tensor_count");
    m.layers.resize(static_cast<size_t>(m.config.n_layers));

    // expected tensor sequence, in order
    struct Slot {
        std::string name;
        Tensor2* mat = nullptr;
        std::vector<float>* vec = nullptr;
    };
    std::vector<Slot> slots;
    slots.push_back({"embedding", &m.embedding, nullptr});
    slots.push_back({"pos_embedding", &m.pos_embedding, nullptr});
    for (size_t i = 0; i < m.layers.size(); ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        auto& l = m.layers[i];
        slots.push_back({p + "attn_norm", nullptr, &l.attn_norm});
        slots.push_back({p + "wq", &l.wq, nullptr});
        slots.push_back({p + "wk", &l.wk, nullptr});
        slots.push_back({p + "wv", &l.wv, nullptr});
        slots.push_back({p + "wo", &l.wo, nullptr});
        slots.push_back({p + "mlp_norm", nullptr, &l.mlp_norm});
        slots.push_back({p + "w1", &l.w1, nullptr});
        slots.push_back({p + "b1", nullptr, &l.b1});
        slots.push_back({p + "w2", &l.w2, nullptr});
    }
    slots.push_back({"final_norm", nullptr, &m.final_norm});
    slots.push_back({"unembedding", &m.unembedding, nullptr});

    if (count != slots.size()) {
        throw Error(ErrorKind::shape_mismatch,
                    "weight shape mismatch: expected " + std::to_string(slots.size()) +
                        " tensors, file declares " + std::to_string(count));
    }
    for (auto& slot : slots) {
        const std::string name = r.take_name();
        if (name != slot.name) {
            throw Error(ErrorKind::shape_mismatch,
                        "weight shape mismatch: expected tensor '" + slot.name + "', found '" +
                            name + "'");
        }
        const auto ndim = r.take<uint32_t>("ndim");
        if (slot.mat != nullptr) {
            if (ndim != 2) {
                throw Error(ErrorKind::shape_mismatch,
                            "weight shape mismatch: " + name + " must be rank 2");
            }
            const auto rows = r.take<uint32_t>("rows");
            const auto cols = r.take<uint32_t>("cols");
            slot.mat->rows = static_cast<int64_t>(rows);
            slot.mat->cols = static_cast<int64_t>(cols);
            slot.mat->data = r.take_f32s(static_cast<size_t>(rows) * cols, name.c_str());
        } else {
            if (ndim != 1) {
                throw Error(ErrorKind::shape_mismatch,
                            "weight shape mismatch: " + name + " must be rank 1");
            }
            const auto len = r.take<uint32_t>("len");
            *slot.vec = r.take_f32s(len, name.c_str());
        }
    }
    if (!r.exhausted()) {
        throw Error(ErrorKind::corrupt_payload, "corrupt weight payload: trailing bytes");
    }

    verify_model_shapes(m);
    m.model_id = compute_model_id(m);
    return m;
}

}  // namespace steer
