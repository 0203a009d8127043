#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "swindepth/tensor.hpp"

namespace swindepth {

namespace detail {
inline void skip_ppm_space(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}
}  // namespace detail

// Binary PPM (P6, 8-bit). img: [3,H,W] with values in [0,1], clamped and
// rounded on write.
template <class T>
void write_ppm(const std::string& path, const Tensor<T>& img) {
    check(img.rank() == 3 && img.dim(0) == 3, "write_ppm: expected [3,H,W]");
    const int64_t H = img.dim(1), W = img.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_ppm: cannot open " + path);
    out << "P6\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(W * 3));
    const T* p = img.ptr();
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                double v = static_cast<double>(p[(c * H + y) * W + x]);
                v = v < 0 ? 0 : (v > 1 ? 1 : v);
                row[size_t(x * 3 + c)] = static_cast<unsigned char>(v * 255.0 + 0.5);
            }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw DataError("write_ppm: write failed for " + path);
}

template <class T>
Tensor<T> read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_ppm: cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw DataError("read_ppm: " + path + " is not binary PPM");
    detail::skip_ppm_space(in);
    int64_t w = 0, h = 0, maxval = 0;
    in >> w;
    detail::skip_ppm_space(in);
    in >> h;
    detail::skip_ppm_space(in);
    in >> maxval;
    if (w <= 0 || h <= 0 || maxval != 255) throw DataError("read_ppm: bad header in " + path);
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> buf(static_cast<size_t>(w * h * 3));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw DataError("read_ppm: truncated pixel data in " + path);
    Tensor<T> img = Tensor<T>::zeros({3, h, w});
    T* p = img.ptr();
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                p[(c * h + y) * w + x] = static_cast<T>(buf[size_t((y * w + x) * 3 + c)]) / T(255);
    return img;
}

// Grayscale PFM, scale -1.0 (little-endian), rows bottom-to-top, float32
// payload. map: [1,H,W].
template <class T>
void write_pfm(const std::string& path, const Tensor<T>& map) {
    check(map.rank() == 3 && map.dim(0) == 1, "write_pfm: expected [1,H,W]");
    const int64_t H = map.dim(1), W = map.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_pfm: cannot open " + path);
    out << "Pf\n" << W << " " << H << "\n-1.0\n";
    std::vector<float> row(static_cast<size_t>(W));
    const T* p = map.ptr();
    for (int64_t y = H - 1; y >= 0; --y) {
        for (int64_t x = 0; x < W; ++x) row[size_t(x)] = static_cast<float>(p[y * W + x]);
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw DataError("write_pfm: write failed for " + path);
}

template <class T>
Tensor<T> read_pfm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_pfm: cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "Pf") throw DataError("read_pfm: " + path + " is not grayscale PFM");
    int64_t w = 0, h = 0;
    double scale = 0;
    in >> w >> h >> scale;
    if (w <= 0 || h <= 0 || scale >= 0) throw DataError("read_pfm: bad header in " + path);
    in.get();
    std::vector<float> buf(static_cast<size_t>(w * h));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw DataError("read_pfm: truncated payload in " + path);
    Tensor<T> map = Tensor<T>::zeros({1, h, w});
    T* p = map.ptr();
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            p[y * w + x] = static_cast<T>(buf[size_t((h - 1 - y) * w + x)]);
    return map;
}

}  // namespace swindepth
