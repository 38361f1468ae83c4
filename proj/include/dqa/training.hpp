#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dqa/docmodel.hpp"
#include "dqa/model.hpp"
#include "dqa/preprocess.hpp"
#include "dqa/treegen.hpp"

namespace dqa {

// Supervision for one QA pair. Only the heads that apply to the answer type
// carry labels; the gold tree's leaves are resolved to V_tag or V_con ids.
struct TrainingLabels {
    AnswerType head = AnswerType::Span;
    Scale scale = Scale::None;
    std::optional<std::pair<int, int>> span;  // absolute token indices, inclusive
    std::optional<std::vector<int>> bio;      // per document token, B/I/O
    ExprTree gold_tree;                       // arithmetic only, aligned
    TreeVocabulary tree_vocab;                // gold V_tag over tagged numbers
    std::vector<int> gold_tree_ids;           // pre-order decoder token ids
};

// Builds labels from the gold answer. Span answers locate the gold string
// (evidence first, then first exact token match). Tagging answers mark each
// gold span B/I. Arithmetic parses the derivation and aligns each leaf:
// evidence number tokens first, then V_con constants, then the earliest
// matching document number (which is added to the gold tags so the tree stays
// derivable). Throws unlocatable_answer / unalignable_leaf.
TrainingLabels make_labels(const QAPair& qa, const InputSequence& seq,
                           const Document& doc, const ModelConfig& cfg);

// Per-term weights for ablation; the faithful objective is the plain sum.
struct LossWeights {
    double head = 1.0, span = 1.0, bio = 1.0, scale = 1.0, tree = 1.0;
};

// Summed negative log-likelihood over the applicable heads, built on `t`.
nn::Var example_loss(nn::Tape& t, Model& model, const InputSequence& seq,
                     const TrainingLabels& labels, const LossWeights& weights = {});

struct TrainConfig {
    int epochs = 60;
    int batch_size = 16;
    double lr = 1e-3;
    uint64_t seed = 7;
    double clip_norm = 1.0;
    int eval_beam = 2;
    int eval_every = 1;          // dev-metric cadence in epochs
    double early_stop_em = -1.0; // stop once dev EM reaches this, if positive

    bool valid() const {
        return epochs > 0 && batch_size > 0 && lr > 0 && clip_norm > 0 &&
               eval_beam > 0 && eval_every > 0;
    }
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double dev_em = 0.0;
    double dev_f1 = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    int skipped_records = 0;
    int best_epoch = -1;
    double best_dev_em = -1.0;
    double best_dev_f1 = -1.0;
};

// Gradient descent over the summed loss with shuffled batches and gradient
// clipping; deterministic for a fixed seed. Evaluates EM/F1 on `dev` every
// eval_every epochs and keeps the best-dev parameters in `model`. Records
// that fail label construction are skipped and counted.
TrainResult train(Model& model, const Dataset& train_ds, const Dataset& dev_ds,
                  const TrainConfig& cfg, const std::string& log_path = "");

}  // namespace dqa
