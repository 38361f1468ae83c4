#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dqa/docmodel.hpp"

namespace dqa {

// bag-of-words multiset after normalization
using TokenBag = std::map<std::string, int>;

// lowercase, punctuation to spaces, drop {a, an, the}, split on whitespace
TokenBag normalize_text(const std::string& s);
std::vector<std::string> normalize_tokens(const std::string& s);
std::string normalize_span(const std::string& s);  // normalized tokens re-joined

// one parsed line of a predictions file
struct PredAnswer {
    std::string uid;
    bool has_error = false;
    std::string error;
    bool numeric = false;
    double value = 0.0;
    std::vector<std::string> strings;
    Scale scale = Scale::None;
    AnswerType answer_type = AnswerType::Span;
    double score = 0.0;
    bool degraded = false;

    std::optional<double> canonical() const {
        if (!numeric) return std::nullopt;
        return value * scale_factor(scale);
    }
    std::vector<std::string> as_spans() const;
};

// both numbers rounded to 4 decimals before comparison
bool numeric_values_match(double a, double b);

// Numeric gold: canonical values must agree after rounding (sign included).
// String gold: normalized span multisets must be equal.
int exact_match(const PredAnswer& pred, const QAPair& gold);

// Numeric gold: all-or-nothing on the exact-match test. String gold: optimal
// one-to-one span alignment of per-pair bag F1, divided by the larger count.
double numeracy_f1(const PredAnswer& pred, const QAPair& gold);

double pair_bag_f1(const TokenBag& a, const TokenBag& b);

// exact assignment optimum of summed per-pair F1 over one-to-one alignments
double best_alignment_sum(const std::vector<TokenBag>& pred,
                          const std::vector<TokenBag>& gold);

struct TypeStats {
    int count = 0;
    double em_sum = 0.0;
    double f1_sum = 0.0;
};

struct EvalReport {
    double em = 0.0, f1 = 0.0;  // percentages
    int total = 0;
    std::map<std::string, TypeStats> by_type;  // keyed by gold answer type
    int missing = 0;
    int degraded = 0;
    int errored = 0;

    std::string to_json() const;
    std::string to_table() const;
};

std::vector<PredAnswer> load_predictions(const std::string& path);

// Gold answer types index the breakdown; absent predictions score zero.
// Throws unknown_uid if a prediction does not match any gold uid.
EvalReport evaluate(const Dataset& gold, const std::vector<PredAnswer>& preds);
EvalReport evaluate_file(const Dataset& gold, const std::string& predictions_path);

}  // namespace dqa
