#include "dqa/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace dqa {

using json = nlohmann::ordered_json;

std::vector<std::string> normalize_tokens(const std::string& s) {
    std::string cleaned;
    cleaned.reserve(s.size());
    for (char ch : s) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c))
            cleaned.push_back(static_cast<char>(std::tolower(c)));
        else
            cleaned.push_back(' ');
    }
    std::vector<std::string> out;
    std::istringstream iss(cleaned);
    std::string w;
    while (iss >> w)
        if (w != "a" && w != "an" && w != "the") out.push_back(w);
    return out;
}

TokenBag normalize_text(const std::string& s) {
    TokenBag bag;
    for (const std::string& w : normalize_tokens(s)) ++bag[w];
    return bag;
}

std::string normalize_span(const std::string& s) {
    std::string out;
    for (const std::string& w : normalize_tokens(s)) {
        if (!out.empty()) out.push_back(' ');
        out += w;
    }
    return out;
}

namespace {
std::string format_number(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}
}  // namespace

std::vector<std::string> PredAnswer::as_spans() const {
    if (numeric) return {format_number(value)};
    return strings;
}

bool numeric_values_match(double a, double b) {
    return std::llround(static_cast<long double>(a) * 1e4L) ==
           std::llround(static_cast<long double>(b) * 1e4L);
}

int exact_match(const PredAnswer& pred, const QAPair& gold) {
    if (pred.has_error) return 0;
    if (gold.numeric_gold()) {
        auto canon = pred.canonical();
        if (!canon) return 0;
        double gold_canon = gold.gold_number() * scale_factor(gold.scale);
        return numeric_values_match(*canon, gold_canon) ? 1 : 0;
    }
    std::vector<std::string> pred_norm, gold_norm;
    for (const std::string& s : pred.as_spans()) pred_norm.push_back(normalize_span(s));
    for (const std::string& s : gold.gold_strings()) gold_norm.push_back(normalize_span(s));
    std::sort(pred_norm.begin(), pred_norm.end());
    std::sort(gold_norm.begin(), gold_norm.end());
    return pred_norm == gold_norm ? 1 : 0;
}

double pair_bag_f1(const TokenBag& a, const TokenBag& b) {
    int na = 0, nb = 0, overlap = 0;
    for (const auto& [w, c] : a) na += c;
    for (const auto& [w, c] : b) nb += c;
    for (const auto& [w, c] : a) {
        auto it = b.find(w);
        if (it != b.end()) overlap += std::min(c, it->second);
    }
    if (na == 0 || nb == 0 || overlap == 0) return 0.0;
    double p = static_cast<double>(overlap) / na;
    double r = static_cast<double>(overlap) / nb;
    return 2.0 * p * r / (p + r);
}

double best_alignment_sum(const std::vector<TokenBag>& pred,
                          const std::vector<TokenBag>& gold) {
    const int n = static_cast<int>(pred.size());
    const int m = static_cast<int>(gold.size());
    if (n == 0 || m == 0) return 0.0;
    // assignment over the smaller side as bitmask
    const bool swap_sides = m > n;
    const auto& rows = swap_sides ? gold : pred;
    const auto& cols = swap_sides ? pred : gold;
    const int R = static_cast<int>(rows.size());
    const int C = static_cast<int>(cols.size());
    std::vector<std::vector<double>> score(R, std::vector<double>(C));
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) score[i][j] = pair_bag_f1(rows[i], cols[j]);
    // dp[mask] = best sum assigning the first popcount(mask) rows to columns in mask
    // (C >= R, rows may also stay unmatched: model by allowing skip)
    // dp over rows with option to leave a row unmatched
    std::vector<double> dp(static_cast<size_t>(1) << C, -1.0);
    dp[0] = 0.0;
    std::vector<double> next;
    for (int i = 0; i < R; ++i) {
        next.assign(dp.size(), -1.0);
        for (size_t mask = 0; mask < dp.size(); ++mask) {
            if (dp[mask] < 0.0) continue;
            // leave row i unmatched
            next[mask] = std::max(next[mask], dp[mask]);
            for (int j = 0; j < C; ++j) {
                if (mask & (1u << j)) continue;
                size_t nm = mask | (1u << j);
                next[nm] = std::max(next[nm], dp[mask] + score[i][j]);
            }
        }
        dp.swap(next);
    }
    return *std::max_element(dp.begin(), dp.end());
}

double numeracy_f1(const PredAnswer& pred, const QAPair& gold) {
    if (pred.has_error) return 0.0;
    if (gold.numeric_gold()) return exact_match(pred, gold) ? 1.0 : 0.0;
    std::vector<TokenBag> pred_bags, gold_bags;
    for (const std::string& s : pred.as_spans()) pred_bags.push_back(normalize_text(s));
    for (const std::string& s : gold.gold_strings()) gold_bags.push_back(normalize_text(s));
    if (pred_bags.empty() || gold_bags.empty()) return 0.0;
    double total = best_alignment_sum(pred_bags, gold_bags);
    return total / std::max(pred_bags.size(), gold_bags.size());
}

std::vector<PredAnswer> load_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open predictions file: " + path);
    std::vector<PredAnswer> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw malformed_input(path + ":" + std::to_string(line_no) +
                                  ": invalid JSON: " + e.what());
        }
        PredAnswer p;
        p.uid = j.at("uid").get<std::string>();
        if (j.contains("error")) {
            p.has_error = true;
            p.error = j.at("error").get<std::string>();
            out.push_back(std::move(p));
            continue;
        }
        const json& ans = j.at("answer");
        if (ans.is_number()) {
            p.numeric = true;
            p.value = ans.get<double>();
        } else {
            for (const json& s : ans) p.strings.push_back(s.get<std::string>());
        }
        p.scale = scale_from_string(j.at("scale").get<std::string>());
        p.answer_type = answer_type_from_string(j.at("answer_type").get<std::string>());
        p.score = j.value("score", 0.0);
        p.degraded = j.value("degraded", false);
        out.push_back(std::move(p));
    }
    return out;
}

EvalReport evaluate(const Dataset& gold, const std::vector<PredAnswer>& preds) {
    std::map<std::string, const PredAnswer*> by_uid;
    std::map<std::string, bool> gold_uids;
    for (const QAPair& qa : gold.qa_pairs) gold_uids[qa.qa_uid] = true;
    for (const PredAnswer& p : preds) {
        if (!gold_uids.count(p.uid))
            throw unknown_uid("prediction uid \"" + p.uid + "\" not present in gold dataset");
        by_uid[p.uid] = &p;
    }

    EvalReport rep;
    double em_sum = 0.0, f1_sum = 0.0;
    for (const QAPair& qa : gold.qa_pairs) {
        ++rep.total;
        TypeStats& ts = rep.by_type[to_string(qa.answer_type)];
        ++ts.count;
        auto it = by_uid.find(qa.qa_uid);
        if (it == by_uid.end()) {
            ++rep.missing;
            continue;  // scores 0
        }
        const PredAnswer& p = *it->second;
        if (p.has_error) ++rep.errored;
        if (p.degraded) ++rep.degraded;
        int em = exact_match(p, qa);
        double f1 = numeracy_f1(p, qa);
        em_sum += em;
        f1_sum += f1;
        ts.em_sum += em;
        ts.f1_sum += f1;
    }
    if (rep.total > 0) {
        rep.em = 100.0 * em_sum / rep.total;
        rep.f1 = 100.0 * f1_sum / rep.total;
    }
    return rep;
}

EvalReport evaluate_file(const Dataset& gold, const std::string& predictions_path) {
    return evaluate(gold, load_predictions(predictions_path));
}

std::string EvalReport::to_json() const {
    json j;
    j["overall"]["em"] = em;
    j["overall"]["f1"] = f1;
    json types;
    for (const auto& [name, ts] : by_type) {
        json t;
        t["em"] = ts.count ? 100.0 * ts.em_sum / ts.count : 0.0;
        t["f1"] = ts.count ? 100.0 * ts.f1_sum / ts.count : 0.0;
        types[name] = std::move(t);
    }
    j["by_type"] = std::move(types);
    json counts;
    counts["total"] = total;
    for (const auto& [name, ts] : by_type) counts[name] = ts.count;
    counts["missing"] = missing;
    counts["degraded"] = degraded;
    counts["errored"] = errored;
    j["counts"] = std::move(counts);
    return j.dump(1);
}

std::string EvalReport::to_table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1);
    os << "type         count     EM     F1\n";
    for (const auto& [name, ts] : by_type)
        os << std::left << std::setw(12) << name << std::right << std::setw(6) << ts.count
           << std::setw(7) << (ts.count ? 100.0 * ts.em_sum / ts.count : 0.0)
           << std::setw(7) << (ts.count ? 100.0 * ts.f1_sum / ts.count : 0.0) << "\n";
    os << std::left << std::setw(12) << "overall" << std::right << std::setw(6) << total
       << std::setw(7) << em << std::setw(7) << f1 << "\n";
    if (missing || degraded || errored)
        os << "missing " << missing << ", degraded " << degraded << ", errored "
           << errored << "\n";
    return os.str();
}

}  // namespace dqa
