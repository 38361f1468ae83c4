#include "dqa/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dqa/evaluation.hpp"
#include "dqa/heads.hpp"
#include "dqa/inference.hpp"

namespace dqa {

namespace {

const Word& word_of(const Document& doc, const TokenSource& src) {
    for (const Page& p : doc.pages)
        if (p.page_index == src.page_index)
            return p.blocks[static_cast<size_t>(src.block_id)]
                .words[static_cast<size_t>(src.word_index)];
    throw error("token source does not resolve to a document word");
}

// absolute token indices covered by one evidence span, in order
std::vector<int> evidence_tokens(const EvidenceSpan& ev, const InputSequence& seq) {
    std::vector<int> out;
    for (int i : seq.document_token_indices()) {
        const TokenSource& src = seq.tokens[i].source;
        if (src.page_index == ev.page_index && src.block_id == ev.block_id &&
            src.word_index >= ev.word_begin && src.word_index < ev.word_end)
            out.push_back(i);
    }
    return out;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream iss(s);
    std::string w;
    while (iss >> w) out.push_back(w);
    return out;
}

// first exact word-sequence match inside one block
std::optional<std::pair<int, int>> locate_string(const std::string& text,
                                                 const InputSequence& seq,
                                                 const Document& doc) {
    std::vector<std::string> words = split_ws(text);
    if (words.empty()) return std::nullopt;
    std::vector<int> rows = seq.document_token_indices();
    for (size_t i = 0; i < rows.size(); ++i) {
        bool ok = true;
        for (size_t k = 0; k < words.size(); ++k) {
            if (i + k >= rows.size()) {
                ok = false;
                break;
            }
            int row = rows[i + k];
            int prev = rows[i + k - (k ? 1 : 0)];
            const TokenSource& src = seq.tokens[row].source;
            const TokenSource& first = seq.tokens[rows[i]].source;
            if (k > 0 && (row != prev + 1 || src.page_index != first.page_index ||
                          src.block_id != first.block_id)) {
                ok = false;
                break;
            }
            if (word_of(doc, src).text != words[k]) {
                ok = false;
                break;
            }
        }
        if (ok) return std::make_pair(rows[i], rows[i + words.size() - 1]);
    }
    return std::nullopt;
}

std::vector<TokenSpan> evidence_spans(const QAPair& qa, const InputSequence& seq) {
    std::vector<TokenSpan> spans;
    for (const EvidenceSpan& ev : qa.evidence) {
        std::vector<int> toks = evidence_tokens(ev, seq);
        if (toks.empty()) continue;
        spans.push_back({toks.front(), toks.back() + 1});
    }
    return spans;
}

}  // namespace

TrainingLabels make_labels(const QAPair& qa, const InputSequence& seq,
                           const Document& doc, const ModelConfig& cfg) {
    TrainingLabels out;
    out.head = qa.answer_type;
    out.scale = qa.scale;

    switch (qa.answer_type) {
        case AnswerType::Span: {
            std::optional<std::pair<int, int>> span;
            std::vector<TokenSpan> evs = evidence_spans(qa, seq);
            if (!evs.empty()) span = std::make_pair(evs.front().begin, evs.front().end - 1);
            if (!span) span = locate_string(qa.gold_strings().front(), seq, doc);
            if (!span)
                throw unlocatable_answer("gold span \"" + qa.gold_strings().front() +
                                         "\" not present in the input sequence (qa " +
                                         qa.qa_uid + ")");
            out.span = span;
            return out;
        }
        case AnswerType::Spans:
        case AnswerType::Counting: {
            std::vector<TokenSpan> spans = evidence_spans(qa, seq);
            if (spans.empty() && qa.answer_type == AnswerType::Spans) {
                for (const std::string& s : qa.gold_strings()) {
                    auto span = locate_string(s, seq, doc);
                    if (span) spans.push_back({span->first, span->second + 1});
                }
            }
            if (spans.empty())
                throw unlocatable_answer("no gold evidence spans located (qa " +
                                         qa.qa_uid + ")");
            std::sort(spans.begin(), spans.end());
            out.bio = encode_spans(spans, seq);
            return out;
        }
        case AnswerType::Arithmetic:
            break;
    }

    // arithmetic: align derivation leaves against the document numbers
    if (!qa.derivation)
        throw malformed_input("arithmetic qa without derivation: " + qa.qa_uid);
    ExprTree parsed = parse_derivation(*qa.derivation);

    std::map<int, double> number_at;  // token index -> value
    for (const NumberToken& nt : seq.number_candidates)
        number_at[nt.token_index] = nt.value;

    std::set<int> evidence_rows;
    for (const TokenSpan& s : evidence_spans(qa, seq))
        for (int i = s.begin; i < s.end; ++i) evidence_rows.insert(i);

    std::set<int> tagged_rows;  // gold tag coverage: evidence plus additions
    for (int row : evidence_rows)
        if (number_at.count(row)) tagged_rows.insert(row);

    struct LeafBind {
        bool is_constant = false;
        int constant = -1;
        int token = -1;
    };
    std::function<void(const ExprTree&, std::vector<LeafBind>&)> plan =
        [&](const ExprTree& node, std::vector<LeafBind>& binds) {
            if (node->is_op) {
                plan(node->left, binds);
                plan(node->right, binds);
                return;
            }
            const double v = node->value;
            LeafBind bind;
            // evidence tokens first
            int found = -1;
            for (int row : evidence_rows) {
                auto it = number_at.find(row);
                if (it != number_at.end() && it->second == v) {
                    found = row;
                    break;  // sets iterate ascending: earliest position
                }
            }
            if (found >= 0) {
                bind.token = found;
            } else {
                // then the constant list
                int ci = -1;
                for (size_t k = 0; k < cfg.constants.size(); ++k)
                    if (cfg.constants[k] == v) {
                        ci = static_cast<int>(k);
                        break;
                    }
                if (ci >= 0) {
                    bind.is_constant = true;
                    bind.constant = ci;
                } else {
                    // finally any document number; it joins the gold tags
                    for (const NumberToken& nt : seq.number_candidates)
                        if (nt.value == v) {
                            found = nt.token_index;
                            break;
                        }
                    if (found < 0)
                        throw unalignable_leaf(
                            "derivation leaf " + std::to_string(v) +
                            " matches no document number and no constant (qa " +
                            qa.qa_uid + ")");
                    bind.token = found;
                    tagged_rows.insert(found);
                }
            }
            binds.push_back(bind);
        };
    std::vector<LeafBind> binds;
    plan(parsed, binds);

    // gold V_tag: tagged numbers in token order
    out.tree_vocab.constants = cfg.constants;
    std::map<int, int> tag_pos;
    for (int row : tagged_rows) {
        tag_pos[row] = static_cast<int>(out.tree_vocab.tagged.size());
        out.tree_vocab.tagged.push_back({row, number_at.at(row)});
    }

    // rebuild the tree with resolved leaf sources
    size_t cursor = 0;
    std::function<ExprTree(const ExprTree&)> rebuild = [&](const ExprTree& node) -> ExprTree {
        if (node->is_op) {
            ExprTree l = rebuild(node->left);
            ExprTree r = rebuild(node->right);
            return make_op(node->op, std::move(l), std::move(r));
        }
        const LeafBind& b = binds[cursor++];
        if (b.is_constant)
            return make_leaf(node->value, {LeafSource::Kind::Constant, b.constant});
        return make_leaf(node->value, {LeafSource::Kind::Tagged, tag_pos.at(b.token)});
    };
    out.gold_tree = rebuild(parsed);
    if (node_count(out.gold_tree) > cfg.node_cap)
        throw unalignable_leaf("gold tree exceeds the node cap (qa " + qa.qa_uid + ")");
    out.gold_tree_ids = preorder_token_ids(out.gold_tree, out.tree_vocab);

    // gold tags: evidence spans plus any added single-number spans
    std::vector<TokenSpan> spans = evidence_spans(qa, seq);
    std::set<int> covered;
    for (const TokenSpan& s : spans)
        for (int i = s.begin; i < s.end; ++i) covered.insert(i);
    for (int row : tagged_rows)
        if (!covered.count(row)) spans.push_back({row, row + 1});
    std::sort(spans.begin(), spans.end());
    out.bio = encode_spans(spans, seq);
    return out;
}

namespace {
nn::Var weighted(nn::Tape& t, nn::Var term, double w) {
    return w == 1.0 ? term : t.scale(term, w);
}
}  // namespace

nn::Var example_loss(nn::Tape& t, Model& model, const InputSequence& seq,
                     const TrainingLabels& labels, const LossWeights& weights) {
    Encoder encoder = model.make_encoder();
    Heads heads = model.make_heads();
    EncodedVars enc = encoder.encode(t, seq);

    nn::Var total = t.zeros(1, 1);

    // answer-type head
    nn::Var head_logp = t.log_softmax_rows(heads.head_logits(t, enc.cls));
    total = t.sub(total, weighted(t, t.pick(head_logp, 0, static_cast<int>(labels.head)),
                                  weights.head));

    nn::Var doc_mat;
    if (!enc.doc_rows.empty()) doc_mat = t.gather_rows(enc.X, enc.doc_rows);

    std::map<int, int> row_pos;
    for (size_t i = 0; i < enc.doc_rows.size(); ++i)
        row_pos[enc.doc_rows[i]] = static_cast<int>(i);

    if (labels.span) {
        nn::Var slp = t.log_softmax_rows(heads.span_start_logits(t, doc_mat));
        nn::Var elp = t.log_softmax_rows(heads.span_end_logits(t, doc_mat));
        total = t.sub(total, weighted(t, t.pick(slp, 0, row_pos.at(labels.span->first)),
                                      weights.span));
        total = t.sub(total, weighted(t, t.pick(elp, 0, row_pos.at(labels.span->second)),
                                      weights.span));
    }

    if (labels.bio) {
        nn::Var tag_logp = t.log_softmax_rows(heads.bio_logits(t, doc_mat));
        const std::vector<int>& gold = *labels.bio;
        const int n = static_cast<int>(gold.size());
        nn::Mat mask(n, 3);
        for (int i = 0; i < n; ++i) mask.at(i, gold[static_cast<size_t>(i)]) = -1.0 / n;
        total = t.add(total, weighted(t, t.sum(t.mul(tag_logp, t.input(std::move(mask)))),
                                      weights.bio));
    }

    // scale
    nn::Var scale_logits;
    if (labels.head == AnswerType::Arithmetic) {
        std::vector<int> tagged_rows;
        for (const TaggedNumber& tn : labels.tree_vocab.tagged)
            tagged_rows.push_back(tn.token_index);
        nn::Var h_num = tagged_rows.empty()
                            ? t.zeros(1, model.config.encoder.hidden)
                            : t.mean_rows(t.gather_rows(enc.X, tagged_rows));
        scale_logits = heads.scale_logits_arith(t, enc.cls, h_num);
    } else {
        scale_logits = heads.scale_logits_other(t, enc.cls);
    }
    nn::Var scale_logp = t.log_softmax_rows(scale_logits);
    total = t.sub(total, weighted(t, t.pick(scale_logp, 0, static_cast<int>(labels.scale)),
                                  weights.scale));

    // expression tree, teacher forced
    if (labels.head == AnswerType::Arithmetic) {
        TreeDecoder decoder = model.make_tree_decoder();
        nn::Var attended = enc.doc_rows.empty() ? enc.cls : doc_mat;
        TreeVocabulary local = labels.tree_vocab;
        for (TaggedNumber& tn : local.tagged) tn.token_index = row_pos.at(tn.token_index);
        nn::Var vemb = decoder.vocab_embeddings(t, attended, local);
        total = t.add(total, weighted(t,
                                      decoder.teacher_loss(t, enc.cls, attended, vemb,
                                                           local, labels.gold_tree_ids,
                                                           model.config.node_cap),
                                      weights.tree));
    }
    return total;
}

TrainResult train(Model& model, const Dataset& train_ds, const Dataset& dev_ds,
                  const TrainConfig& cfg, const std::string& log_path) {
    if (!cfg.valid()) throw config_error("invalid training configuration");
    TrainResult result;

    // preprocess and label every trainable record up front
    struct Example {
        InputSequence seq;
        TrainingLabels labels;
    };
    std::vector<Example> examples;
    for (const QAPair& qa : train_ds.qa_pairs) {
        const Document& doc = train_ds.document_of(qa);
        try {
            Example ex;
            ex.seq = assemble_input(qa.question, doc, model.vocab, model.config.preprocess);
            ex.labels = make_labels(qa, ex.seq, doc, model.config);
            examples.push_back(std::move(ex));
        } catch (const error&) {
            ++result.skipped_records;
        }
    }
    if (examples.empty()) throw no_trainable_examples("no trainable examples survive");

    std::ofstream log_out;
    if (!log_path.empty()) {
        log_out.open(log_path);
        if (!log_out) throw error("cannot write training log: " + log_path);
    }

    nn::AdamOptimizer opt(cfg.lr, cfg.clip_norm);
    std::mt19937_64 shuffle_rng(cfg.seed);
    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> best_params;
    double last_em = 0.0, last_f1 = 0.0;

    auto snapshot = [&]() {
        best_params.clear();
        for (const auto& [name, p] : model.params.all())
            best_params.insert(best_params.end(), p.value.d.begin(), p.value.d.end());
    };
    auto restore = [&]() {
        size_t off = 0;
        for (auto& [name, p] : model.params.all()) {
            std::copy(best_params.begin() + static_cast<long>(off),
                      best_params.begin() + static_cast<long>(off + p.value.size()),
                      p.value.d.begin());
            off += p.value.size();
        }
    };

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        size_t i = 0;
        while (i < order.size()) {
            size_t batch_end = std::min(order.size(), i + static_cast<size_t>(cfg.batch_size));
            const double inv = 1.0 / static_cast<double>(batch_end - i);
            for (; i < batch_end; ++i) {
                Example& ex = examples[order[i]];
                nn::Tape t;
                nn::Var loss = example_loss(t, model, ex.seq, ex.labels);
                loss_sum += t.val(loss).d[0];
                t.backward(loss);
            }
            for (auto& [name, p] : model.params.all())
                for (double& g : p.grad.d) g *= inv;
            opt.step(model.params);
        }
        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = loss_sum / static_cast<double>(examples.size());

        if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            std::string tmp = log_path.empty() ? "dqa_dev_preds.tmp.jsonl"
                                               : log_path + ".devpred.tmp";
            predict_batch(dev_ds, model, tmp, cfg.eval_beam);
            EvalReport rep = evaluate_file(dev_ds, tmp);
            std::remove(tmp.c_str());
            last_em = rep.em;
            last_f1 = rep.f1;
            if (rep.em > result.best_dev_em) {
                result.best_dev_em = rep.em;
                result.best_dev_f1 = rep.f1;
                result.best_epoch = epoch;
                snapshot();
            }
        }
        entry.dev_em = last_em;
        entry.dev_f1 = last_f1;
        result.log.push_back(entry);
        if (log_out) {
            nlohmann::ordered_json j;
            j["epoch"] = entry.epoch;
            j["train_loss"] = entry.train_loss;
            j["dev_em"] = entry.dev_em;
            j["dev_f1"] = entry.dev_f1;
            log_out << j.dump() << "\n";
            log_out.flush();
        }
        if (cfg.early_stop_em > 0 && last_em >= cfg.early_stop_em) break;
    }
    if (!best_params.empty()) restore();
    return result;
}

}  // namespace dqa
