#pragma once

#include "tinydet/rng.hpp"
#include "tinydet/tensor.hpp"

namespace testutil {

inline tinydet::Tensor random_tensor(std::vector<int> shape, tinydet::Rng& rng,
                                     double scale = 1.0) {
    tinydet::Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

}  // namespace testutil
