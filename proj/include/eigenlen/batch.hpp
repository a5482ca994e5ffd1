#pragma once

#include <cstddef>
#include <vector>

#include "eigenlen/ndiff.hpp"
#include "eigenlen/tasks.hpp"

namespace eigenlen::batch {

using ndiff::Matrix;

struct Stacked {
    Matrix env_x, obj_x;  // (B * points) x 3, clouds stacked in order
    std::vector<int> labels;
};

inline Stacked stack(const std::vector<tasks::TaskInstance>& records,
                     const std::vector<std::size_t>& order, std::size_t begin,
                     std::size_t end) {
    const std::size_t count = end - begin;
    const std::size_t env_points = records[order[begin]].env_cloud.size();
    const std::size_t obj_points = records[order[begin]].obj_cloud.size();
    Stacked out;
    out.env_x = Matrix(static_cast<int>(count * env_points), 3);
    out.obj_x = Matrix(static_cast<int>(count * obj_points), 3);
    out.labels.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const auto& rec = records[order[begin + k]];
        for (std::size_t i = 0; i < env_points; ++i) {
            double* row = out.env_x.row(static_cast<int>(k * env_points + i));
            row[0] = rec.env_cloud[i].x;
            row[1] = rec.env_cloud[i].y;
            row[2] = rec.env_cloud[i].z;
        }
        for (std::size_t i = 0; i < obj_points; ++i) {
            double* row = out.obj_x.row(static_cast<int>(k * obj_points + i));
            row[0] = rec.obj_cloud[i].x;
            row[1] = rec.obj_cloud[i].y;
            row[2] = rec.obj_cloud[i].z;
        }
        out.labels.push_back(rec.label ? 1 : 0);
    }
    return out;
}

inline std::vector<std::size_t> identity_order(std::size_t n) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    return order;
}

}  // namespace eigenlen::batch
