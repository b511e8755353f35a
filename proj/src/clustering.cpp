// Copyright 2026 The htgq Authors
// SPDX-License-Identifier: Apache-2.0

#include "htgq/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace htgq {

namespace {

// One contiguous run of timesteps, inclusive on both ends (1-based).
struct Segment {
    int lo;
    int hi;
    int size() const { return hi - lo + 1; }
};

using Values = std::vector<const ChannelVector*>;

double euclidean(const ChannelVector& a, const ChannelVector& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

ChannelVector segment_centroid(const Values& z, const Segment& s) {
    ChannelVector mu(z[static_cast<std::size_t>(s.lo - 1)]->size(), 0.0);
    for (int t = s.lo; t <= s.hi; ++t) {
        const ChannelVector& v = *z[static_cast<std::size_t>(t - 1)];
        for (std::size_t i = 0; i < mu.size(); ++i) mu[i] += v[i];
    }
    for (double& v : mu) v /= static_cast<double>(s.size());
    return mu;
}

double segment_distance(const Values& z, const Segment& a, const Segment& b, Linkage linkage) {
    switch (linkage) {
        case Linkage::Average: {
            double acc = 0.0;
            for (int ta = a.lo; ta <= a.hi; ++ta) {
                for (int tb = b.lo; tb <= b.hi; ++tb) {
                    acc += euclidean(*z[static_cast<std::size_t>(ta - 1)],
                                     *z[static_cast<std::size_t>(tb - 1)]);
                }
            }
            return acc / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
        }
        case Linkage::Centroid:
            return euclidean(segment_centroid(z, a), segment_centroid(z, b));
        case Linkage::Ward: {
            const double na = a.size();
            const double nb = b.size();
            const double d = euclidean(segment_centroid(z, a), segment_centroid(z, b));
            return na * nb / (na + nb) * d * d;
        }
    }
    throw std::invalid_argument("unknown linkage");
}

}  // namespace

const char* to_string(Linkage linkage) {
    switch (linkage) {
        case Linkage::Average: return "average";
        case Linkage::Centroid: return "centroid";
        case Linkage::Ward: return "ward";
    }
    return "?";
}

Linkage linkage_from_string(std::string_view name) {
    if (name == "average") return Linkage::Average;
    if (name == "centroid") return Linkage::Centroid;
    if (name == "ward") return Linkage::Ward;
    throw std::invalid_argument("unknown linkage: " + std::string(name));
}

void TemporalPlan::validate() const {
    if (num_timesteps < 1 || num_groups < 1 || num_groups > num_timesteps) {
        throw std::invalid_argument("TemporalPlan: need 1 <= G <= T");
    }
    if (boundaries.size() != static_cast<std::size_t>(num_groups - 1)) {
        throw std::invalid_argument("TemporalPlan: expected G - 1 boundaries");
    }
    int prev = 0;
    for (int b : boundaries) {
        if (b <= prev || b >= num_timesteps) {
            throw std::invalid_argument("TemporalPlan: boundaries must be strictly increasing in (0, T)");
        }
        prev = b;
    }
}

std::vector<const ChannelVector*> order_by_timestep(const std::vector<ShiftVector>& shifts,
                                                    int num_timesteps) {
    if (num_timesteps < 1 || shifts.size() != static_cast<std::size_t>(num_timesteps)) {
        throw std::invalid_argument("order_by_timestep: need one shift per timestep");
    }
    std::vector<const ChannelVector*> by_t(shifts.size(), nullptr);
    for (const ShiftVector& s : shifts) {
        if (s.timestep < 1 || s.timestep > num_timesteps) {
            throw std::invalid_argument("order_by_timestep: timestep out of range");
        }
        auto& slot = by_t[static_cast<std::size_t>(s.timestep - 1)];
        if (slot != nullptr) {
            throw std::invalid_argument("order_by_timestep: duplicate timestep");
        }
        slot = &s.values;
    }
    const std::size_t dim = by_t[0]->size();
    for (const auto* v : by_t) {
        if (v->size() != dim) {
            throw std::invalid_argument("order_by_timestep: shift vectors differ in length");
        }
    }
    return by_t;
}

TemporalPlan cluster_timesteps(const std::vector<ShiftVector>& shifts, int num_groups,
                               Linkage linkage) {
    const int T = static_cast<int>(shifts.size());
    if (num_groups < 1 || num_groups > T) {
        throw std::invalid_argument("cluster_timesteps: need 1 <= G <= T");
    }
    const Values z = order_by_timestep(shifts, T);

    std::vector<Segment> segs;
    segs.reserve(static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t) segs.push_back({t, t});

    // dist[i] is the linkage distance between segs[i] and segs[i + 1]; only
    // the two neighbours of a merged pair change between iterations.
    std::vector<double> dist(segs.size() > 1 ? segs.size() - 1 : 0);
    for (std::size_t i = 0; i + 1 < segs.size(); ++i) {
        dist[i] = segment_distance(z, segs[i], segs[i + 1], linkage);
    }

    while (static_cast<int>(segs.size()) > num_groups) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < dist.size(); ++i) {
            if (dist[i] < dist[best]) best = i;  // strict: ties keep the earliest pair
        }
        segs[best].hi = segs[best + 1].hi;
        segs.erase(segs.begin() + static_cast<std::ptrdiff_t>(best + 1));
        dist.erase(dist.begin() + static_cast<std::ptrdiff_t>(best));
        if (best > 0) {
            dist[best - 1] = segment_distance(z, segs[best - 1], segs[best], linkage);
        }
        if (best + 1 < segs.size()) {
            dist[best] = segment_distance(z, segs[best], segs[best + 1], linkage);
        }
    }

    TemporalPlan plan;
    plan.num_timesteps = T;
    plan.num_groups = num_groups;
    plan.linkage = linkage;
    for (std::size_t i = 0; i + 1 < segs.size(); ++i) {
        plan.boundaries.push_back(segs[i].hi);
    }
    plan.validate();
    return plan;
}

double adjacent_distance(std::span<const ShiftVector> a, std::span<const ShiftVector> b,
                         Linkage linkage) {
    if (a.empty() || b.empty()) {
        throw std::invalid_argument("adjacent_distance: empty group");
    }
    Values z;
    z.reserve(a.size() + b.size());
    const std::size_t dim = a[0].values.size();
    for (const ShiftVector& s : a) z.push_back(&s.values);
    for (const ShiftVector& s : b) z.push_back(&s.values);
    for (const auto* v : z) {
        if (v->size() != dim) {
            throw std::invalid_argument("adjacent_distance: shift vectors differ in length");
        }
    }
    const Segment sa{1, static_cast<int>(a.size())};
    const Segment sb{static_cast<int>(a.size()) + 1, static_cast<int>(z.size())};
    return segment_distance(z, sa, sb, linkage);
}

int group_of(int t, const TemporalPlan& plan) {
    plan.validate();
    if (t < 1 || t > plan.num_timesteps) {
        throw std::invalid_argument("group_of: timestep out of range");
    }
    const auto it = std::lower_bound(plan.boundaries.begin(), plan.boundaries.end(), t);
    return static_cast<int>(it - plan.boundaries.begin()) + 1;
}

namespace {

double plan_cost(const std::vector<ShiftVector>& shifts, const TemporalPlan& plan, bool squared) {
    plan.validate();
    const Values z = order_by_timestep(shifts, plan.num_timesteps);
    double total = 0.0;
    for (int g = 1; g <= plan.num_groups; ++g) {
        const int lo = g == 1 ? 1 : plan.boundaries[static_cast<std::size_t>(g - 2)] + 1;
        const int hi = g == plan.num_groups ? plan.num_timesteps
                                            : plan.boundaries[static_cast<std::size_t>(g - 1)];
        const ChannelVector mu = segment_centroid(z, Segment{lo, hi});
        for (int t = lo; t <= hi; ++t) {
            const double d = euclidean(*z[static_cast<std::size_t>(t - 1)], mu);
            total += squared ? d * d : d;
        }
    }
    return total;
}

}  // namespace

double objective(const std::vector<ShiftVector>& shifts, const TemporalPlan& plan) {
    return plan_cost(shifts, plan, /*squared=*/false);
}

double within_group_sse(const std::vector<ShiftVector>& shifts, const TemporalPlan& plan) {
    return plan_cost(shifts, plan, /*squared=*/true);
}

}  // namespace htgq
