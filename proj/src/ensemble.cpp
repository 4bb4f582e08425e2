#include "subkit/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "subkit/common.hpp"
#include "subkit/metrics.hpp"

namespace subkit {

void ProbMatrix::validate() const {
    if (example_ids.size() != rows.size())
        throw DataError("prob matrix: " + std::to_string(example_ids.size()) + " ids vs " +
                        std::to_string(rows.size()) + " rows");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r[0] < 0.0 || r[0] > 1.0 || r[1] < 0.0 || r[1] > 1.0 ||
            std::abs(r[0] + r[1] - 1.0) > 1e-9)
            throw DataError("prob matrix: row " + std::to_string(i) + " is not a probability pair");
    }
}

std::vector<int> ProbMatrix::argmax() const {
    std::vector<int> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[1] > r[0] ? 1 : 0);
    return out;
}

void ProbMatrix::save(const std::string& path) const {
    validate();
    std::ofstream out(path);
    if (!out) throw DataError("prob matrix: cannot write " + path);
    out << "example_id,p0,p1\n";
    char buf[64];
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out << example_ids[i];
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g", rows[i][0], rows[i][1]);
        out << buf << "\n";
    }
    std::ofstream meta(path + ".meta");
    if (!meta) throw DataError("prob matrix: cannot write " + path + ".meta");
    meta << "model_id = " << model_id << "\n";
    meta << "backbone_tag = " << backbone_tag << "\n";
    meta << "data_tag = " << data_tag << "\n";
    meta << "fold_provenance = " << fold_provenance << "\n";
    if (!out || !meta) throw DataError("prob matrix: write failed for " + path);
}

ProbMatrix ProbMatrix::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("prob matrix: cannot read " + path);
    std::string line;
    if (!std::getline(in, line) || (line != "example_id,p0,p1" && line != "example_id,p0,p1\r"))
        throw DataError("prob matrix: bad header in " + path);
    ProbMatrix pm;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string id, p0, p1;
        if (!std::getline(row, id, ',') || !std::getline(row, p0, ',') || !std::getline(row, p1))
            throw DataError("prob matrix: malformed line " + std::to_string(lineno) + " in " + path);
        try {
            pm.example_ids.push_back(std::stoll(id));
            pm.rows.push_back({std::stod(p0), std::stod(p1)});
        } catch (const std::exception&) {
            throw DataError("prob matrix: unparseable line " + std::to_string(lineno) + " in " + path);
        }
    }
    std::ifstream meta(path + ".meta");
    if (meta) {
        while (std::getline(meta, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
            if (key == "model_id") pm.model_id = val;
            else if (key == "backbone_tag") pm.backbone_tag = val;
            else if (key == "data_tag") pm.data_tag = val;
            else if (key == "fold_provenance") pm.fold_provenance = val;
        }
    }
    pm.validate();
    return pm;
}

std::vector<int> soft_vote(const std::vector<ProbMatrix>& members) {
    if (members.empty()) throw DataError("soft_vote: no members");
    const std::size_t n = members[0].rows.size();
    for (const auto& m : members)
        if (m.rows.size() != n)
            throw DataError("soft_vote: member \"" + m.model_id + "\" has " +
                            std::to_string(m.rows.size()) + " rows, expected " + std::to_string(n));
    std::vector<int> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s0 = 0.0, s1 = 0.0;
        for (const auto& m : members) {
            s0 += m.rows[i][0];
            s1 += m.rows[i][1];
        }
        out.push_back(s1 > s0 ? 1 : 0);
    }
    return out;
}

std::string EnsembleSpec::to_text() const {
    std::ostringstream out;
    char buf[64];
    out << "ensemble members (" << members.size() << "):\n";
    for (const auto& m : members) out << "  " << m << "\n";
    for (const auto& step : log) {
        std::snprintf(buf, sizeof buf, "%.4f", step.score);
        out << "step " << step.step << ": chose " << step.chosen << " (" << step.reason
            << ") score " << buf << "\n";
        for (const auto& [id, score] : step.candidate_scores) {
            std::snprintf(buf, sizeof buf, "%.4f", score);
            out << "    candidate " << id << " -> " << buf << "\n";
        }
    }
    std::snprintf(buf, sizeof buf, "%.4f", final_score);
    out << "final score: " << buf << "\n";
    return out.str();
}

EnsembleSpec greedy_select(const std::vector<ProbMatrix>& candidates, const std::vector<int>& labels,
                           int max_size) {
    if (candidates.empty()) throw DataError("greedy_select: no candidates");
    if (max_size < 1) throw DataError("greedy_select: max_size must be >= 1");
    for (const auto& c : candidates) {
        c.validate();
        if (c.rows.size() != labels.size())
            throw DataError("greedy_select: candidate \"" + c.model_id + "\" has " +
                            std::to_string(c.rows.size()) + " rows vs " +
                            std::to_string(labels.size()) + " labels");
    }

    EnsembleSpec spec;
    std::vector<const ProbMatrix*> chosen;
    std::set<std::size_t> used;
    std::set<std::string> backbones, datas;
    double best_score = -1.0;  // below any reachable micro-F1: the first member is always taken

    for (int step = 0; static_cast<int>(chosen.size()) < max_size; ++step) {
        SelectionStep rec;
        rec.step = step;
        double step_best = -1.0;
        std::vector<std::size_t> tied;
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            if (used.count(i)) continue;
            std::vector<ProbMatrix> trial;
            for (auto* m : chosen) trial.push_back(*m);
            trial.push_back(candidates[i]);
            const double score = micro_f1(labels, soft_vote(trial));
            rec.candidate_scores.emplace_back(candidates[i].model_id, score);
            if (score > step_best) {
                step_best = score;
                tied = {i};
            } else if (score == step_best) {
                tied.push_back(i);
            }
        }
        if (tied.empty() || step_best <= best_score) break;  // exhausted or no improvement

        std::string reason = "best score";
        if (tied.size() > 1) {
            std::vector<std::size_t> unseen_backbone;
            for (auto i : tied)
                if (!backbones.count(candidates[i].backbone_tag)) unseen_backbone.push_back(i);
            if (!unseen_backbone.empty() && unseen_backbone.size() < tied.size()) {
                tied = unseen_backbone;
                reason = "tie-break: unseen backbone";
            }
        }
        if (tied.size() > 1) {
            std::vector<std::size_t> unseen_data;
            for (auto i : tied)
                if (!datas.count(candidates[i].data_tag)) unseen_data.push_back(i);
            if (!unseen_data.empty() && unseen_data.size() < tied.size()) {
                tied = unseen_data;
                reason = "tie-break: unseen data";
            }
        }
        if (tied.size() > 1) {
            auto lowest = *std::min_element(tied.begin(), tied.end(), [&](std::size_t a, std::size_t b) {
                return candidates[a].model_id < candidates[b].model_id;
            });
            tied = {lowest};
            reason = "tie-break: lowest id";
        }

        const auto pick = tied[0];
        used.insert(pick);
        chosen.push_back(&candidates[pick]);
        backbones.insert(candidates[pick].backbone_tag);
        datas.insert(candidates[pick].data_tag);
        best_score = step_best;

        rec.chosen = candidates[pick].model_id;
        rec.reason = reason;
        rec.score = step_best;
        spec.members.push_back(rec.chosen);
        spec.log.push_back(std::move(rec));
    }
    spec.final_score = best_score;
    return spec;
}

}  // namespace subkit
