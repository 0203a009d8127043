#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "swindepth/optim.hpp"

namespace swindepth {

namespace detail {

inline uint32_t crc32(const uint8_t* data, size_t n) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = 0xFFFFFFFFu;
    for (size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

struct ByteWriter {
    std::vector<uint8_t> buf;

    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
};

struct ByteReader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;

    void raw(void* p, size_t n) {
        if (pos + n > buf.size()) throw DataError("checkpoint: truncated record");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    uint8_t u8() {
        uint8_t v;
        raw(&v, 1);
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        raw(&v, 4);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        raw(&v, 8);
        return v;
    }
    std::string str() {
        uint32_t n = u32();
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
};

template <class T>
constexpr uint8_t dtype_tag() {
    return sizeof(T) == 4 ? 0 : 1;
}

}  // namespace detail

// File layout (little-endian): magic "SWDP", version u32, parameter table of
// (name, dtype tag, rank, extents, payload) records, optimizer moments and
// step, RNG state, step/epoch counters, in-epoch batch order, config
// snapshot, then CRC32 of all preceding bytes.
template <class T>
struct CheckpointData {
    std::vector<std::pair<std::string, Tensor<T>>> tensors;
    std::vector<std::vector<T>> opt_m, opt_v;
    int64_t opt_t = 0;
    std::array<uint64_t, 4> rng_state{};
    int64_t step = 0;
    int64_t epoch = 0;
    std::vector<uint64_t> epoch_order;
    std::string config_text;
};

inline constexpr uint32_t kCheckpointVersion = 1;

template <class T>
void save_checkpoint(const std::string& path, const CheckpointData<T>& data) {
    detail::ByteWriter w;
    w.raw("SWDP", 4);
    w.u32(kCheckpointVersion);

    w.u32(static_cast<uint32_t>(data.tensors.size()));
    for (const auto& [name, t] : data.tensors) {
        w.str(name);
        w.u8(detail::dtype_tag<T>());
        w.u8(static_cast<uint8_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) w.u64(static_cast<uint64_t>(t.dim(i)));
        w.raw(t.ptr(), static_cast<size_t>(t.numel()) * sizeof(T));
    }

    w.u32(static_cast<uint32_t>(data.opt_m.size()));
    w.u64(static_cast<uint64_t>(data.opt_t));
    for (size_t i = 0; i < data.opt_m.size(); ++i) {
        w.u64(data.opt_m[i].size());
        w.raw(data.opt_m[i].data(), data.opt_m[i].size() * sizeof(T));
        w.raw(data.opt_v[i].data(), data.opt_v[i].size() * sizeof(T));
    }

    for (uint64_t s : data.rng_state) w.u64(s);
    w.u64(static_cast<uint64_t>(data.step));
    w.u64(static_cast<uint64_t>(data.epoch));
    w.u64(data.epoch_order.size());
    for (uint64_t v : data.epoch_order) w.u64(v);
    w.str(data.config_text);

    w.u32(detail::crc32(w.buf.data(), w.buf.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_checkpoint: cannot open " + path);
    out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw DataError("save_checkpoint: write failed for " + path);
}

template <class T>
CheckpointData<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_checkpoint: cannot open " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 12) throw DataError("load_checkpoint: file too small: " + path);

    uint32_t stored_crc;
    std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
    uint32_t actual_crc = detail::crc32(buf.data(), buf.size() - 4);
    if (stored_crc != actual_crc)
        throw DataError("load_checkpoint: CRC mismatch in " + path + " (stored " +
                        std::to_string(stored_crc) + ", computed " + std::to_string(actual_crc) + ")");

    detail::ByteReader r{buf};
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, "SWDP", 4) != 0)
        throw DataError("load_checkpoint: bad magic in " + path);
    uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw DataError("load_checkpoint: unsupported version " + std::to_string(version));

    CheckpointData<T> data;
    uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        uint8_t tag = r.u8();
        if (tag != detail::dtype_tag<T>())
            throw DataError("load_checkpoint: dtype of '" + name + "' does not match run precision");
        uint8_t rank = r.u8();
        Shape shape(rank);
        for (int d = 0; d < rank; ++d) shape[static_cast<size_t>(d)] = static_cast<int64_t>(r.u64());
        Tensor<T> t = Tensor<T>::zeros(shape);
        r.raw(t.ptr(), static_cast<size_t>(t.numel()) * sizeof(T));
        data.tensors.emplace_back(std::move(name), std::move(t));
    }

    uint32_t opt_count = r.u32();
    data.opt_t = static_cast<int64_t>(r.u64());
    for (uint32_t i = 0; i < opt_count; ++i) {
        uint64_t n = r.u64();
        std::vector<T> m(n), v(n);
        r.raw(m.data(), n * sizeof(T));
        r.raw(v.data(), n * sizeof(T));
        data.opt_m.push_back(std::move(m));
        data.opt_v.push_back(std::move(v));
    }

    for (auto& s : data.rng_state) s = r.u64();
    data.step = static_cast<int64_t>(r.u64());
    data.epoch = static_cast<int64_t>(r.u64());
    uint64_t order_n = r.u64();
    data.epoch_order.resize(order_n);
    for (auto& v : data.epoch_order) v = r.u64();
    data.config_text = r.str();
    return data;
}

}  // namespace swindepth
