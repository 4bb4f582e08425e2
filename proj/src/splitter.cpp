#include "subkit/splitter.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "subkit/rng.hpp"

namespace subkit {

std::string query_group_key(const Example& ex) { return ex.query; }

namespace {

struct GroupInfo {
    std::string key;
    std::vector<std::int64_t> ids;
    std::int64_t count[2] = {0, 0};
    std::int64_t size() const { return count[0] + count[1]; }
};

}  // namespace

FoldPlan assign_folds(const std::vector<Example>& examples, const GroupKeyFn& group_key, int k,
                      std::uint64_t seed) {
    if (k < 2) throw DataError("assign_folds: k must be >= 2");
    std::unordered_map<std::string, std::size_t> index;
    std::vector<GroupInfo> groups;
    std::int64_t global[2] = {0, 0};
    for (const auto& ex : examples) {
        if (ex.label != 0 && ex.label != 1) throw DataError("assign_folds: label must be 0 or 1");
        const auto key = group_key(ex);
        auto [it, fresh] = index.emplace(key, groups.size());
        if (fresh) {
            groups.emplace_back();
            groups.back().key = key;
        }
        auto& g = groups[it->second];
        g.ids.push_back(ex.id);
        g.count[ex.label]++;
        global[ex.label]++;
    }
    if (static_cast<int>(groups.size()) < k) throw DataError("not enough groups");

    // seeded shuffle then stable sort: ties in size keep shuffled order
    std::vector<std::size_t> order(groups.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, "fold-shuffle"));
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return groups[a].size() > groups[b].size();
    });

    const double share[2] = {static_cast<double>(global[0]) / k, static_cast<double>(global[1]) / k};
    // deviations are measured relative to the share so the minority class
    // carries the same weight as the majority class
    const double norm[2] = {share[0] > 0 ? share[0] : 1.0, share[1] > 0 ? share[1] : 1.0};
    std::vector<std::array<std::int64_t, 2>> fold_counts(static_cast<std::size_t>(k), {0, 0});
    std::vector<std::int64_t> fold_groups(static_cast<std::size_t>(k), 0);

    FoldPlan plan;
    plan.k = k;
    std::size_t remaining = order.size();
    for (std::size_t oi = 0; oi < order.size(); ++oi, --remaining) {
        const auto& g = groups[order[oi]];
        std::size_t n_empty = 0;
        for (int f = 0; f < k; ++f)
            if (fold_groups[static_cast<std::size_t>(f)] == 0) ++n_empty;
        // when the remaining groups are exactly enough to fill the empty
        // folds, restrict candidates so every fold ends up non-empty
        const bool force_empty = n_empty > 0 && remaining <= n_empty;

        int best = -1;
        double best_cost = 0.0;
        for (int f = 0; f < k; ++f) {
            if (force_empty && fold_groups[static_cast<std::size_t>(f)] != 0) continue;
            const auto& fc = fold_counts[static_cast<std::size_t>(f)];
            // change in the total squared deviation if g lands in fold f;
            // terms of the other folds cancel, so this ranks exactly like the
            // full post-assignment objective
            double cost = 0.0;
            for (int c = 0; c < 2; ++c) {
                const double after =
                    (static_cast<double>(fc[static_cast<std::size_t>(c)] + g.count[c]) - share[c]) / norm[c];
                const double before = (static_cast<double>(fc[static_cast<std::size_t>(c)]) - share[c]) / norm[c];
                cost += after * after - before * before;
            }
            if (best < 0 || cost < best_cost) {
                best = f;
                best_cost = cost;
            }
        }
        auto& fc = fold_counts[static_cast<std::size_t>(best)];
        fc[0] += g.count[0];
        fc[1] += g.count[1];
        fold_groups[static_cast<std::size_t>(best)]++;
        for (auto id : g.ids) {
            plan.assignment[id] = best;
            plan.group_of[id] = g.key;
        }
    }
    return plan;
}

PlanReport verify_plan(const FoldPlan& plan, const std::vector<Example>& examples) {
    std::unordered_map<std::int64_t, const Example*> by_id;
    for (const auto& ex : examples) by_id.emplace(ex.id, &ex);
    if (by_id.size() != examples.size()) throw DataError("verify_plan: duplicate example ids");
    for (const auto& [id, fold] : plan.assignment) {
        if (!by_id.count(id)) throw DataError("verify_plan: unknown example id in plan: " + std::to_string(id));
        if (fold < 0 || fold >= plan.k) throw DataError("verify_plan: fold index out of range");
    }
    for (const auto& ex : examples)
        if (!plan.assignment.count(ex.id))
            throw DataError("verify_plan: example not covered by plan: " + std::to_string(ex.id));

    PlanReport rep;
    rep.k = plan.k;
    rep.fold_sizes.assign(static_cast<std::size_t>(plan.k), 0);
    std::vector<std::int64_t> pos(static_cast<std::size_t>(plan.k), 0);
    std::int64_t global_pos = 0;
    std::unordered_map<std::string, int> group_fold;
    for (const auto& ex : examples) {
        const int f = plan.assignment.at(ex.id);
        rep.fold_sizes[static_cast<std::size_t>(f)]++;
        pos[static_cast<std::size_t>(f)] += ex.label;
        global_pos += ex.label;
        const auto& key = ex.query;
        auto [it, fresh] = group_fold.emplace(key, f);
        if (!fresh && it->second != f) rep.leakage = true;
    }
    rep.fold_positive_ratio.resize(static_cast<std::size_t>(plan.k));
    for (int f = 0; f < plan.k; ++f) {
        const auto n = rep.fold_sizes[static_cast<std::size_t>(f)];
        rep.fold_positive_ratio[static_cast<std::size_t>(f)] =
            n == 0 ? 0.0 : static_cast<double>(pos[static_cast<std::size_t>(f)]) / static_cast<double>(n);
    }
    rep.global_positive_ratio =
        examples.empty() ? 0.0 : static_cast<double>(global_pos) / static_cast<double>(examples.size());
    return rep;
}

std::string PlanReport::to_text() const {
    std::ostringstream out;
    out << "fold  size  positive_ratio\n";
    char buf[64];
    for (int f = 0; f < k; ++f) {
        std::snprintf(buf, sizeof(buf), "%-4d  %-4lld  %.4f\n", f,
                      static_cast<long long>(fold_sizes[static_cast<std::size_t>(f)]),
                      fold_positive_ratio[static_cast<std::size_t>(f)]);
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "global positive ratio: %.4f\n", global_positive_ratio);
    out << buf;
    out << "group leakage: " << (leakage ? "yes" : "no") << "\n";
    return out.str();
}

void FoldPlan::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write fold plan: " + path);
    out << "example_id,fold\n";
    for (const auto& [id, fold] : assignment) out << id << "," << fold << "\n";
}

FoldPlan FoldPlan::load(const std::string& path, int k_hint) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open fold plan: " + path);
    std::string line;
    if (!std::getline(in, line) || (line != "example_id,fold" && line != "example_id,fold\r"))
        throw DataError("bad fold plan header in " + path);
    FoldPlan plan;
    int max_fold = -1;
    std::int64_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw DataError("fold plan row " + std::to_string(row) + ": expected example_id,fold");
        try {
            const std::int64_t id = std::stoll(line.substr(0, comma));
            const int fold = std::stoi(line.substr(comma + 1));
            if (plan.assignment.count(id))
                throw DataError("fold plan row " + std::to_string(row) + ": duplicate example id");
            plan.assignment[id] = fold;
            max_fold = std::max(max_fold, fold);
        } catch (const std::invalid_argument&) {
            throw DataError("fold plan row " + std::to_string(row) + ": unparseable");
        }
    }
    plan.k = k_hint > 0 ? k_hint : max_fold + 1;
    return plan;
}

}  // namespace subkit
