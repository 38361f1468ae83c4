#include "dqa/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dqa/evaluation.hpp"

namespace dqa {

using json = nlohmann::ordered_json;

namespace {

std::string format_value(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

const Word& word_of(const Document& doc, const TokenSource& src) {
    for (const Page& p : doc.pages)
        if (p.page_index == src.page_index)
            return p.blocks[static_cast<size_t>(src.block_id)]
                .words[static_cast<size_t>(src.word_index)];
    throw error("token source does not resolve to a document word");
}

std::string span_text(const Document& doc, const InputSequence& seq, int from, int to) {
    std::string out;
    for (int i = from; i <= to; ++i) {
        if (!seq.in_document(i)) continue;
        if (!out.empty()) out.push_back(' ');
        out += word_of(doc, seq.tokens[i].source).text;
    }
    return out;
}

}  // namespace

std::string Answer::display() const {
    std::string text;
    if (numeric)
        text = format_value(value_number);
    else {
        for (size_t i = 0; i < value_strings.size(); ++i) {
            if (i) text += ", ";
            text += value_strings[i];
        }
    }
    if (scale != Scale::None) text += std::string(" ") + to_string(scale);
    return text;
}

void apply_scale(Answer& a) {
    if (a.numeric)
        a.canonical_value = a.value_number * scale_factor(a.scale);
    else
        a.canonical_value.reset();
}

Answer answer_question(const Document& doc, const std::string& question, Model& model,
                       int beam) {
    InputSequence seq = assemble_input(question, doc, model.vocab, model.config.preprocess);
    nn::Tape t;
    Encoder encoder = model.make_encoder();
    Heads heads = model.make_heads();
    EncodedVars enc = encoder.encode(t, seq);

    // answer type
    nn::Var head_logp = t.log_softmax_rows(heads.head_logits(t, enc.cls));
    const nn::Mat& hl = t.val(head_logp);
    int head_arg = 0;
    for (int i = 1; i < 4; ++i)
        if (hl.d[i] > hl.d[head_arg]) head_arg = i;
    AnswerType type = static_cast<AnswerType>(head_arg);

    Answer out;
    out.answer_type = type;
    double strategy_score = 0.0;

    nn::Var doc_mat;
    const bool has_doc = !enc.doc_rows.empty();
    if (has_doc) doc_mat = t.gather_rows(enc.X, enc.doc_rows);

    std::vector<TokenSpan> decoded_spans;
    std::vector<int> tagged_rows;  // numeric tokens inside decoded spans
    if (type != AnswerType::Span && has_doc) {
        nn::Var tag_logp = t.log_softmax_rows(heads.bio_logits(t, doc_mat));
        const nn::Mat& tl = t.val(tag_logp);
        std::vector<int> labels(enc.doc_rows.size());
        for (size_t i = 0; i < enc.doc_rows.size(); ++i) {
            int best = 0;
            for (int c = 1; c < 3; ++c)
                if (tl.at(static_cast<int>(i), c) > tl.at(static_cast<int>(i), best))
                    best = c;
            labels[i] = best;
            strategy_score += tl.at(static_cast<int>(i), best);
        }
        decoded_spans = decode_bio(labels, seq);
        std::set<int> covered;
        for (const TokenSpan& s : decoded_spans)
            for (int i = s.begin; i < s.end; ++i) covered.insert(i);
        for (const NumberToken& nt : seq.number_candidates)
            if (covered.count(nt.token_index)) tagged_rows.push_back(nt.token_index);
    }

    switch (type) {
        case AnswerType::Span: {
            if (!has_doc) throw no_valid_span("document slice is empty");
            nn::Var slp = t.log_softmax_rows(heads.span_start_logits(t, doc_mat));
            nn::Var elp = t.log_softmax_rows(heads.span_end_logits(t, doc_mat));
            std::vector<double> sl(t.val(slp).d.begin(), t.val(slp).d.end());
            std::vector<double> el(t.val(elp).d.begin(), t.val(elp).d.end());
            SpanPrediction sp =
                predict_span(sl, el, enc.doc_rows, model.config.max_span_len);
            out.value_strings = {span_text(doc, seq, sp.start, sp.end)};
            strategy_score = sp.log_prob;
            break;
        }
        case AnswerType::Spans: {
            std::vector<std::string> texts;
            for (const TokenSpan& s : decoded_spans)
                texts.push_back(span_text(doc, seq, s.begin, s.end - 1));
            // case-sensitive dedup, first occurrence kept
            std::set<std::string> seen;
            for (const std::string& s : texts)
                if (seen.insert(s).second) out.value_strings.push_back(s);
            break;
        }
        case AnswerType::Counting: {
            // spans are counted before deduplication unless configured otherwise
            out.numeric = true;
            if (model.config.count_unique_spans) {
                std::set<std::string> unique;
                for (const TokenSpan& s : decoded_spans)
                    unique.insert(span_text(doc, seq, s.begin, s.end - 1));
                out.value_number = static_cast<double>(unique.size());
            } else {
                out.value_number = static_cast<double>(decoded_spans.size());
            }
            break;
        }
        case AnswerType::Arithmetic: {
            out.numeric = true;
            TreeVocabulary vocab;
            vocab.constants = model.config.constants;
            std::map<int, double> value_at;
            for (const NumberToken& nt : seq.number_candidates)
                value_at[nt.token_index] = nt.value;
            for (int row : tagged_rows) vocab.tagged.push_back({row, value_at.at(row)});

            TreeDecoder decoder = model.make_tree_decoder();
            nn::Var attended = has_doc ? doc_mat : enc.cls;
            // tagged embeddings index into the attended matrix rows
            TreeVocabulary local = vocab;
            std::map<int, int> row_pos;
            for (size_t i = 0; i < enc.doc_rows.size(); ++i) row_pos[enc.doc_rows[i]] = static_cast<int>(i);
            for (TaggedNumber& tn : local.tagged) tn.token_index = row_pos.at(tn.token_index);
            nn::Var vemb = decoder.vocab_embeddings(t, attended, local);
            std::vector<TreeCandidate> cands = decoder.generate(
                t, enc.cls, attended, vemb, local, beam, model.config.node_cap);
            bool executed = false;
            for (const TreeCandidate& c : cands) {
                try {
                    out.value_number = execute(c.tree);
                    strategy_score = c.log_prob;
                    executed = true;
                    break;
                } catch (const division_by_zero&) {
                    continue;  // discard, fall back to the next candidate
                }
            }
            if (!executed) {
                out.value_number = 0.0;
                out.degraded = true;
            }
            break;
        }
    }

    // scale
    if (out.degraded) {
        out.scale = Scale::None;
    } else {
        nn::Var scale_logits;
        if (type == AnswerType::Arithmetic) {
            nn::Var h_num;
            if (tagged_rows.empty())
                h_num = t.zeros(1, model.config.encoder.hidden);
            else
                h_num = t.mean_rows(t.gather_rows(enc.X, tagged_rows));
            scale_logits = heads.scale_logits_arith(t, enc.cls, h_num);
        } else {
            scale_logits = heads.scale_logits_other(t, enc.cls);
        }
        nn::Var scale_logp = t.log_softmax_rows(scale_logits);
        const nn::Mat& slm = t.val(scale_logp);
        int best = 0;
        for (int i = 1; i < 5; ++i)
            if (slm.d[i] > slm.d[best]) best = i;
        out.scale = static_cast<Scale>(best);
        out.score = hl.d[head_arg] + strategy_score + slm.d[best];
    }
    if (out.degraded) out.score = hl.d[head_arg] + strategy_score;

    apply_scale(out);
    return out;
}

int predict_batch(const Dataset& ds, Model& model, const std::string& out_path,
                  int beam) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw error("cannot write predictions file: " + out_path);
    int failures = 0;
    for (const QAPair& qa : ds.qa_pairs) {
        json rec;
        rec["uid"] = qa.qa_uid;
        try {
            Answer a = answer_question(ds.document_of(qa), qa.question, model, beam);
            if (a.numeric)
                rec["answer"] = a.value_number;
            else
                rec["answer"] = a.value_strings;
            rec["scale"] = to_string(a.scale);
            rec["answer_type"] = to_string(a.answer_type);
            rec["score"] = a.score;
            if (a.degraded) rec["degraded"] = true;
        } catch (const std::exception& e) {
            rec["error"] = e.what();
            ++failures;
        }
        out << rec.dump() << "\n";
    }
    return failures;
}

}  // namespace dqa
