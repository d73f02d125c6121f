#pragma once

// Straight-line re-implementation of the task-token grouping, written
// independently of tinydet::transrcnn::task_token_select and kept in test
// code only. Deliberately different mechanics: explicit score pairs and a
// hand-rolled selection sort instead of std::stable_sort.

#include <utility>
#include <vector>

namespace tts_reference {

struct Split {
    std::vector<int> cls;
    std::vector<int> box;
};

inline Split select(const std::vector<double>& a_cls, const std::vector<double>& a_box) {
    const int n = static_cast<int>(a_cls.size());
    std::vector<std::pair<double, int>> ranked;
    for (int i = 0; i < n; ++i) {
        ranked.push_back({a_cls[i] + a_box[i], i});
    }
    // Selection sort, descending score; equal scores keep the lower index first.
    for (int i = 0; i < n; ++i) {
        int best = i;
        for (int j = i + 1; j < n; ++j) {
            const bool higher = ranked[j].first > ranked[best].first;
            const bool tie_lower_index =
                ranked[j].first == ranked[best].first && ranked[j].second < ranked[best].second;
            if (higher || tie_lower_index) best = j;
        }
        std::swap(ranked[i], ranked[best]);
    }
    Split out;
    int taken_cls = 0;
    int taken_box = 0;
    const int half = n / 2;
    for (int i = 0; i < n; ++i) {
        const int idx = ranked[i].second;
        bool to_cls;
        if (taken_box >= half) {
            to_cls = true;
        } else if (a_cls[idx] >= a_box[idx] && taken_cls <= half) {
            to_cls = true;
        } else {
            to_cls = false;
        }
        if (to_cls) {
            out.cls.push_back(idx);
            taken_cls = taken_cls + 1;
        } else {
            out.box.push_back(idx);
            taken_box = taken_box + 1;
        }
    }
    return out;
}

}  // namespace tts_reference
