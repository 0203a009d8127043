#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "swindepth/image_io.hpp"
#include "swindepth/losses.hpp"

namespace swindepth {

// Reader for the dataset directory contract (see synthdata.hpp). Frames and
// depth maps are loaded lazily.
template <class T>
struct SceneData {
    std::string dir;
    std::string id;
    int64_t frame_count = 0;
    Intrinsics<T> intrinsics;
    std::vector<std::array<double, 12>> poses;  // camera-to-world

    std::string frame_path(int64_t i) const {
        char name[64];
        std::snprintf(name, sizeof(name), "/frame_%06lld.ppm", static_cast<long long>(i));
        return dir + name;
    }
    std::string depth_path(int64_t i) const {
        char name[64];
        std::snprintf(name, sizeof(name), "/depth_%06lld.pfm", static_cast<long long>(i));
        return dir + name;
    }
    Tensor<T> frame(int64_t i) const { return read_ppm<T>(frame_path(i)); }
    Tensor<T> depth(int64_t i) const { return read_pfm<T>(depth_path(i)); }
};

template <class T>
struct Dataset {
    std::vector<SceneData<T>> scenes;

    int64_t total_frames() const {
        int64_t n = 0;
        for (const auto& s : scenes) n += s.frame_count;
        return n;
    }

    static Dataset load(const std::string& dir) {
        namespace fs = std::filesystem;
        std::ifstream manifest(fs::path(dir) / "manifest.txt");
        if (!manifest) throw DataError("dataset: missing manifest.txt in " + dir);
        Dataset ds;
        std::string line;
        while (std::getline(manifest, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            SceneData<T> scene;
            if (!(ls >> scene.id >> scene.frame_count) || scene.frame_count < 1)
                throw DataError("dataset: malformed manifest line '" + line + "' in " + dir);
            scene.dir = (fs::path(dir) / scene.id).string();

            std::ifstream intr(scene.dir + "/intrinsics.txt");
            if (!intr) throw DataError("dataset: missing intrinsics.txt in " + scene.dir);
            double fx, fy, cx, cy;
            if (!(intr >> fx >> fy >> cx >> cy))
                throw DataError("dataset: malformed intrinsics in " + scene.dir);
            scene.intrinsics = Intrinsics<T>{static_cast<T>(fx), static_cast<T>(fy),
                                             static_cast<T>(cx), static_cast<T>(cy)};

            std::ifstream pf(scene.dir + "/poses.txt");
            if (!pf) throw DataError("dataset: missing poses.txt in " + scene.dir);
            std::string pl;
            while (std::getline(pf, pl)) {
                if (pl.empty()) continue;
                std::istringstream ps(pl);
                std::array<double, 12> p{};
                for (auto& v : p)
                    if (!(ps >> v)) throw DataError("dataset: malformed pose row in " + scene.dir);
                scene.poses.push_back(p);
            }
            if (static_cast<int64_t>(scene.poses.size()) != scene.frame_count)
                throw DataError("dataset: pose count does not match manifest in " + scene.dir);
            if (!fs::exists(scene.frame_path(0)) || !fs::exists(scene.frame_path(scene.frame_count - 1)))
                throw DataError("dataset: frame files missing in " + scene.dir);
            ds.scenes.push_back(std::move(scene));
        }
        if (ds.scenes.empty()) throw DataError("dataset: empty manifest in " + dir);
        return ds;
    }
};

}  // namespace swindepth
