#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dqa/docmodel.hpp"
#include "dqa/model.hpp"

namespace dqa {

// A typed prediction. `score` is the log-probability of the routed decision
// chain: answer-type choice, the chosen strategy's own score, and the scale.
struct Answer {
    AnswerType answer_type = AnswerType::Span;
    bool numeric = false;
    double value_number = 0.0;
    std::vector<std::string> value_strings;
    Scale scale = Scale::None;
    std::optional<double> canonical_value;  // value x scale factor, numeric only
    double score = 0.0;
    bool degraded = false;

    std::string display() const;  // value text with the scale word appended
};

// Fills canonical_value for numeric answers (value times the scale factor);
// string answers keep canonical_value empty and surface the scale in display().
void apply_scale(Answer& a);

// Full pipeline for one question: preprocess, encode, route on the predicted
// answer type, run that strategy, then predict and apply the scale.
Answer answer_question(const Document& doc, const std::string& question, Model& model,
                       int beam);

// One JSONL record per QA pair, dataset order. Per-record failures become an
// "error" field in that record; the batch never aborts. Returns the number of
// failed records.
int predict_batch(const Dataset& ds, Model& model, const std::string& out_path,
                  int beam);

}  // namespace dqa
