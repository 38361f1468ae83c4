#include <doctest.h>

#include <cmath>

#include "dqa/training.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace dqa;
using namespace dqa::testing;

namespace {

ModelConfig micro_model_config(const Vocab& vocab, int hidden = 16, int layers = 1) {
    ModelConfig cfg;
    cfg.encoder.hidden = hidden;
    cfg.encoder.layers = layers;
    cfg.encoder.heads = 4;
    cfg.encoder.ffn_dim = hidden * 2;
    cfg.encoder.vocab_size = vocab.size();
    cfg.encoder.max_seq_len = 96;
    cfg.encoder.seed = 7;
    cfg.preprocess.token_budget = 96;
    cfg.preprocess.patch_grid = 2;
    return cfg;
}

struct MicroSetup {
    MicroReport mr = micro_report();
    Dataset ds = micro_dataset();
    Vocab vocab;
    Model model;
    MicroSetup(int hidden = 16, int layers = 1, bool zero_params = false) {
        vocab = Vocab::build(ds, 1);
        model.config = micro_model_config(vocab, hidden, layers);
        model.vocab = vocab;
        model.build();
        if (zero_params)
            for (auto& [name, p] : model.params.all())
                std::fill(p.value.d.begin(), p.value.d.end(), 0.0);
    }
    InputSequence seq(const QAPair& qa) {
        return assemble_input(qa.question, mr.doc, vocab, model.config.preprocess);
    }
};

}  // namespace

TEST_CASE("make_labels on the running arithmetic example") {
    MicroSetup ms;
    InputSequence seq = ms.seq(ms.ds.qa_pairs[0]);
    TrainingLabels labels = make_labels(ms.ds.qa_pairs[0], seq, ms.mr.doc, ms.model.config);
    CHECK(labels.head == AnswerType::Arithmetic);
    CHECK(labels.scale == Scale::Millions);
    REQUIRE(labels.bio.has_value());
    // exactly the two operand cells carry B tags
    std::vector<int> rows = seq.document_token_indices();
    std::vector<int> tagged;
    for (size_t i = 0; i < rows.size(); ++i)
        if ((*labels.bio)[i] != kTagO) tagged.push_back(rows[i]);
    REQUIRE(tagged.size() == 2);
    for (int row : tagged) {
        int blk = seq.tokens[row].source.block_id;
        CHECK((blk == ms.mr.cell_1320_block || blk == ms.mr.cell_1731_block));
    }
    REQUIRE(labels.gold_tree != nullptr);
    CHECK(labels.gold_tree->is_op);
    CHECK(labels.gold_tree->op == OpKind::Add);
    CHECK(execute(labels.gold_tree) == 3051.0);
    // both leaves resolved against V_tag
    CHECK(labels.gold_tree->left->source.kind == LeafSource::Kind::Tagged);
    CHECK(labels.gold_tree->right->source.kind == LeafSource::Kind::Tagged);
    CHECK(labels.tree_vocab.tagged.size() == 2);
    CHECK(labels.gold_tree_ids.size() == 3);
}

TEST_CASE("make_labels on span and multi-span examples") {
    MicroSetup ms;
    SUBCASE("span points at the 1,320 cell") {
        const QAPair& qa = ms.ds.qa_pairs[1];
        InputSequence seq = ms.seq(qa);
        TrainingLabels labels = make_labels(qa, seq, ms.mr.doc, ms.model.config);
        REQUIRE(labels.span.has_value());
        CHECK(labels.span->first == labels.span->second);
        CHECK(seq.tokens[labels.span->first].source.block_id == ms.mr.cell_1320_block);
    }
    SUBCASE("string search works when evidence is absent") {
        QAPair qa = ms.ds.qa_pairs[1];
        qa.evidence.clear();
        InputSequence seq = ms.seq(qa);
        TrainingLabels labels = make_labels(qa, seq, ms.mr.doc, ms.model.config);
        REQUIRE(labels.span.has_value());
        CHECK(seq.tokens[labels.span->first].source.block_id == ms.mr.cell_1320_block);
    }
    SUBCASE("unlocatable span throws") {
        QAPair qa = ms.ds.qa_pairs[1];
        qa.evidence.clear();
        qa.gold_answer = std::vector<std::string>{"not present anywhere"};
        InputSequence seq = ms.seq(qa);
        CHECK_THROWS_AS(make_labels(qa, seq, ms.mr.doc, ms.model.config),
                        unlocatable_answer);
    }
    SUBCASE("multi-span gold becomes three disjoint B runs") {
        const QAPair& qa = ms.ds.qa_pairs[2];
        InputSequence seq = ms.seq(qa);
        TrainingLabels labels = make_labels(qa, seq, ms.mr.doc, ms.model.config);
        REQUIRE(labels.bio.has_value());
        int b_count = 0, i_count = 0;
        for (int tag : *labels.bio) {
            if (tag == kTagB) ++b_count;
            if (tag == kTagI) ++i_count;
        }
        CHECK(b_count == 3);
        CHECK(i_count == 0);
    }
}

namespace {
// replica of the error-analysis average derivation: a row holding -14, 0, 0
// with the year count available only as a bare "3" in the caption
Document avg_replica(bool with_count_token) {
    std::vector<TextBlock> blocks;
    int id = 0;
    blocks.push_back(mkline(id++, {"in", "millions"}, 20, 100));
    blocks.push_back(mkline(id++, {"2017"}, 300, 100));
    blocks.push_back(mkline(id++, {"2018"}, 500, 100));
    blocks.push_back(mkline(id++, {"2019"}, 700, 100));
    blocks.push_back(mkline(id++, {"Reductions"}, 20, 160));
    blocks.push_back(mkline(id++, {"(14)"}, 300, 160));
    blocks.push_back(mkline(id++, {"0"}, 500, 160));
    blocks.push_back(mkline(id++, {"0"}, 700, 160));
    std::vector<std::string> caption = {"Figures", "cover"};
    caption.push_back(with_count_token ? "3" : "three");
    caption.insert(caption.end(), {"fiscal", "years", "."});
    blocks.push_back(mkline(id++, caption, 20, 300, 6, 14));
    return mkdoc("avg-d0", {mkpage(0, std::move(blocks), 800, 500)});
}

QAPair avg_qa() {
    QAPair qa;
    qa.qa_uid = "avg-q0";
    qa.doc_uid = "avg-d0";
    qa.question = "What was the average Reductions from 2017 to 2019 ?";
    qa.answer_type = AnswerType::Arithmetic;
    qa.scale = Scale::Millions;
    qa.derivation = "( -14 + 0 + 0)/3";
    qa.gold_answer = -14.0 / 3.0;
    qa.evidence = {{0, 5, 0, 1}, {0, 6, 0, 1}, {0, 7, 0, 1}};
    return qa;
}
}  // namespace

TEST_CASE("leaf alignment: evidence first, constants second, added tokens last") {
    MicroSetup ms;  // for the vocab and config only
    SUBCASE("the divisor binds to the caption token and joins the gold tags") {
        Document doc = avg_replica(true);
        QAPair qa = avg_qa();
        InputSequence seq = assemble_input(qa.question, doc, ms.vocab,
                                           ms.model.config.preprocess);
        TrainingLabels labels = make_labels(qa, seq, doc, ms.model.config);
        // -14, 0, 0 bind to evidence cells; 3 is added from the caption
        REQUIRE(labels.tree_vocab.tagged.size() == 4);
        CHECK(labels.tree_vocab.tagged[3].value == 3.0);
        CHECK(execute(labels.gold_tree) == doctest::Approx(-14.0 / 3.0));
        // the added token is tagged in the gold BIO labels
        std::vector<int> rows = seq.document_token_indices();
        int tagged_count = 0;
        for (size_t i = 0; i < rows.size(); ++i)
            if ((*labels.bio)[i] != kTagO) ++tagged_count;
        CHECK(tagged_count == 4);
        // zeros come from the document, not from V_con
        CHECK(labels.gold_tree->left->right->source.kind == LeafSource::Kind::Tagged);
    }
    SUBCASE("no bare count token anywhere raises unalignable_leaf") {
        Document doc = avg_replica(false);
        QAPair qa = avg_qa();
        InputSequence seq = assemble_input(qa.question, doc, ms.vocab,
                                           ms.model.config.preprocess);
        CHECK_THROWS_AS(make_labels(qa, seq, doc, ms.model.config), unalignable_leaf);
    }
    SUBCASE("values only in V_con become constant leaves") {
        // percent-change style: ((b - a) / a) * 100 with no 100 in the document
        MicroSetup local;
        QAPair qa = local.ds.qa_pairs[0];
        qa.derivation = "((1,731 - 1,320) / 1,320) * 100";
        qa.gold_answer = execute(parse_derivation(*qa.derivation));
        qa.scale = Scale::Percent;
        InputSequence seq = local.seq(qa);
        TrainingLabels labels = make_labels(qa, seq, local.mr.doc, local.model.config);
        // root is *, right leaf is the constant 100
        CHECK(labels.gold_tree->op == OpKind::Mul);
        CHECK(labels.gold_tree->right->source.kind == LeafSource::Kind::Constant);
        CHECK(labels.tree_vocab.constants[static_cast<size_t>(
                  labels.gold_tree->right->source.index)] == 100.0);
    }
}

TEST_CASE("loss of the all-zero model equals the closed-form uniform NLL") {
    MicroSetup ms(16, 1, /*zero_params=*/true);

    SUBCASE("span instance") {
        const QAPair& qa = ms.ds.qa_pairs[1];
        InputSequence seq = ms.seq(qa);
        TrainingLabels labels = make_labels(qa, seq, ms.mr.doc, ms.model.config);
        nn::Tape t;
        double loss = t.val(example_loss(t, ms.model, seq, labels)).d[0];
        const double ld = seq.table_range.size() + seq.text_range.size();
        // head log4 + start log Ld + end log Ld + scale log5
        double expect = std::log(4.0) + 2.0 * std::log(ld) + std::log(5.0);
        CHECK(loss == doctest::Approx(expect).epsilon(1e-9));
    }
    SUBCASE("arithmetic instance adds mean tag NLL and per-step tree NLL") {
        const QAPair& qa = ms.ds.qa_pairs[0];
        InputSequence seq = ms.seq(qa);
        TrainingLabels labels = make_labels(qa, seq, ms.mr.doc, ms.model.config);
        nn::Tape t;
        double loss = t.val(example_loss(t, ms.model, seq, labels)).d[0];
        const double vocab_size = labels.tree_vocab.size();
        double expect = std::log(4.0)               // head
                        + std::log(3.0)             // mean BIO NLL, uniform tags
                        + std::log(5.0)             // scale
                        + 3.0 * std::log(vocab_size);  // three tree steps
        CHECK(loss == doctest::Approx(expect).epsilon(1e-9));
    }
    SUBCASE("uniform head alone contributes log 4") {
        CHECK(std::log(4.0) == doctest::Approx(1.3862943611).epsilon(1e-9));
    }
}

TEST_CASE("span-instance loss equals an independent NLL recomputation") {
    MicroSetup ms(16, 2);
    const QAPair& qa = ms.ds.qa_pairs[1];
    InputSequence seq = ms.seq(qa);
    TrainingLabels labels = make_labels(qa, seq, ms.mr.doc, ms.model.config);

    nn::Tape t;
    double loss = t.val(example_loss(t, ms.model, seq, labels)).d[0];

    // oracle: recompute each applicable term from separately built forwards
    nn::Tape t2;
    Encoder enc = ms.model.make_encoder();
    Heads heads = ms.model.make_heads();
    EncodedVars e = enc.encode(t2, seq);
    nn::Var doc_mat = t2.gather_rows(e.X, e.doc_rows);
    auto logp_at = [&](nn::Var logits, int idx) {
        return t2.val(t2.log_softmax_rows(logits)).d[static_cast<size_t>(idx)];
    };
    std::map<int, int> pos;
    for (size_t i = 0; i < e.doc_rows.size(); ++i) pos[e.doc_rows[i]] = static_cast<int>(i);
    double oracle = 0.0;
    oracle -= logp_at(heads.head_logits(t2, e.cls), static_cast<int>(labels.head));
    oracle -= logp_at(heads.span_start_logits(t2, doc_mat), pos.at(labels.span->first));
    oracle -= logp_at(heads.span_end_logits(t2, doc_mat), pos.at(labels.span->second));
    oracle -= logp_at(heads.scale_logits_other(t2, e.cls), static_cast<int>(labels.scale));
    CHECK(loss == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("arithmetic-instance loss matches a raw-loop tree-step oracle") {
    MicroSetup ms(16, 1);
    const QAPair& qa = ms.ds.qa_pairs[0];
    InputSequence seq = ms.seq(qa);
    TrainingLabels labels = make_labels(qa, seq, ms.mr.doc, ms.model.config);

    nn::Tape t;
    double loss = t.val(example_loss(t, ms.model, seq, labels)).d[0];

    // non-tree terms through the tape, tree term through raw loops
    nn::Tape t2;
    Encoder enc = ms.model.make_encoder();
    Heads heads = ms.model.make_heads();
    EncodedVars e = enc.encode(t2, seq);
    nn::Var doc_mat_v = t2.gather_rows(e.X, e.doc_rows);
    const nn::Mat doc = t2.val(doc_mat_v);
    const nn::Mat cls = t2.val(e.cls);

    auto logp_at = [&](nn::Var logits, int idx) {
        return t2.val(t2.log_softmax_rows(logits)).d[static_cast<size_t>(idx)];
    };
    double oracle = 0.0;
    oracle -= logp_at(heads.head_logits(t2, e.cls), static_cast<int>(labels.head));
    {
        nn::Var tag_logp = t2.log_softmax_rows(heads.bio_logits(t2, doc_mat_v));
        const nn::Mat& tl = t2.val(tag_logp);
        const std::vector<int>& gold = *labels.bio;
        double s = 0;
        for (size_t i = 0; i < gold.size(); ++i)
            s -= tl.at(static_cast<int>(i), gold[i]);
        oracle += s / static_cast<double>(gold.size());
    }
    {
        std::vector<int> tagged;
        std::map<int, int> pos;
        for (size_t i = 0; i < e.doc_rows.size(); ++i) pos[e.doc_rows[i]] = static_cast<int>(i);
        for (const TaggedNumber& tn : labels.tree_vocab.tagged)
            tagged.push_back(tn.token_index);
        nn::Var h_num = t2.mean_rows(t2.gather_rows(e.X, tagged));
        oracle -= logp_at(heads.scale_logits_arith(t2, e.cls, h_num),
                          static_cast<int>(labels.scale));
    }

    // raw-loop goal-driven steps: attention, bilinear scoring, gated updates
    const int H = ms.model.config.encoder.hidden;
    auto& store = ms.model.params;
    auto matvec = [&](const nn::Mat& m, const std::vector<double>& x) {
        std::vector<double> out(static_cast<size_t>(m.cols), 0.0);
        for (int r = 0; r < m.rows; ++r)
            for (int c = 0; c < m.cols; ++c) out[static_cast<size_t>(c)] += x[static_cast<size_t>(r)] * m.at(r, c);
        return out;
    };
    auto add_bias = [&](std::vector<double> v, const nn::Mat& b) {
        for (size_t i = 0; i < v.size(); ++i) v[i] += b.d[i];
        return v;
    };
    auto gate = [&](const std::string& prefix, const std::vector<double>& x) {
        auto g = add_bias(matvec(store.get(prefix + ".wg").value, x),
                          store.get(prefix + ".bg").value);
        auto c = add_bias(matvec(store.get(prefix + ".wc").value, x),
                          store.get(prefix + ".bc").value);
        std::vector<double> out(g.size());
        for (size_t i = 0; i < g.size(); ++i)
            out[i] = (1.0 / (1.0 + std::exp(-g[i]))) * std::tanh(c[i]);
        return out;
    };
    auto concat3 = [](const std::vector<double>& a, const std::vector<double>& b,
                      const std::vector<double>& c) {
        std::vector<double> out;
        out.insert(out.end(), a.begin(), a.end());
        out.insert(out.end(), b.begin(), b.end());
        out.insert(out.end(), c.begin(), c.end());
        return out;
    };

    // decoder vocabulary embeddings
    const TreeVocabulary& tv = labels.tree_vocab;
    std::map<int, int> pos;
    for (size_t i = 0; i < e.doc_rows.size(); ++i) pos[e.doc_rows[i]] = static_cast<int>(i);
    std::vector<std::vector<double>> emb;
    for (int r = 0; r < 4; ++r) {
        std::vector<double> row(static_cast<size_t>(H));
        for (int c = 0; c < H; ++c) row[static_cast<size_t>(c)] = store.get("tree.op_emb").value.at(r, c);
        emb.push_back(row);
    }
    for (size_t k = 0; k < tv.constants.size(); ++k) {
        std::vector<double> row(static_cast<size_t>(H));
        for (int c = 0; c < H; ++c)
            row[static_cast<size_t>(c)] = store.get("tree.con_emb").value.at(static_cast<int>(k), c);
        emb.push_back(row);
    }
    for (const TaggedNumber& tn : tv.tagged) {
        std::vector<double> row(static_cast<size_t>(H));
        int dr = pos.at(tn.token_index);
        for (int c = 0; c < H; ++c) row[static_cast<size_t>(c)] = doc.at(dr, c);
        emb.push_back(row);
    }

    struct Pend {
        std::vector<double> parent, op;
        std::vector<double> left;
        bool left_set = false;
    };
    std::vector<double> goal(cls.d.begin(), cls.d.end());
    std::vector<Pend> stack;
    double tree_nll = 0.0;
    for (int gold : labels.gold_tree_ids) {
        // context = softmax(goal . Wa . D^T) D
        auto s = matvec(store.get("tree.attn.w").value, goal);
        std::vector<double> scores(static_cast<size_t>(doc.rows));
        double mx = -1e300;
        for (int r = 0; r < doc.rows; ++r) {
            double acc = 0;
            for (int c = 0; c < H; ++c) acc += s[static_cast<size_t>(c)] * doc.at(r, c);
            scores[static_cast<size_t>(r)] = acc;
            mx = std::max(mx, acc);
        }
        double z = 0;
        for (double& v : scores) {
            v = std::exp(v - mx);
            z += v;
        }
        std::vector<double> ctx(static_cast<size_t>(H), 0.0);
        for (int r = 0; r < doc.rows; ++r)
            for (int c = 0; c < H; ++c) ctx[static_cast<size_t>(c)] += scores[static_cast<size_t>(r)] / z * doc.at(r, c);
        // bilinear scores over the vocabulary
        std::vector<double> feat;
        feat.insert(feat.end(), goal.begin(), goal.end());
        feat.insert(feat.end(), ctx.begin(), ctx.end());
        auto proj = matvec(store.get("tree.score.w").value, feat);
        std::vector<double> logits(emb.size());
        double lmx = -1e300;
        for (size_t v = 0; v < emb.size(); ++v) {
            double acc = 0;
            for (int c = 0; c < H; ++c) acc += proj[static_cast<size_t>(c)] * emb[v][static_cast<size_t>(c)];
            logits[v] = acc;
            lmx = std::max(lmx, acc);
        }
        double lz = 0;
        for (double v : logits) lz += std::exp(v - lmx);
        tree_nll -= logits[static_cast<size_t>(gold)] - lmx - std::log(lz);
        // transition
        if (gold < 4) {
            auto x = concat3(goal, ctx, emb[static_cast<size_t>(gold)]);
            Pend p;
            p.parent = goal;
            p.op = emb[static_cast<size_t>(gold)];
            stack.push_back(p);
            goal = gate("tree.left", x);
        } else {
            std::vector<double> sub = emb[static_cast<size_t>(gold)];
            while (true) {
                if (stack.empty()) break;
                Pend& top = stack.back();
                if (!top.left_set) {
                    top.left = sub;
                    top.left_set = true;
                    goal = gate("tree.right", concat3(top.parent, top.left, top.op));
                    break;
                }
                sub = gate("tree.comb", concat3(top.op, top.left, sub));
                stack.pop_back();
            }
        }
    }
    oracle += tree_nll;
    CHECK(loss == doctest::Approx(oracle).epsilon(1e-6));
}

TEST_CASE("full-model gradients match finite differences") {
    MicroSetup ms(16, 1);
    const QAPair& qa = ms.ds.qa_pairs[0];  // arithmetic exercises every head
    InputSequence seq = ms.seq(qa);
    TrainingLabels labels = make_labels(qa, seq, ms.mr.doc, ms.model.config);
    auto build = [&](nn::Tape& t) { return example_loss(t, ms.model, seq, labels); };
    auto res = check_gradients(ms.model.params, build, 3, 99, 1e-5);
    INFO(res.worst);
    CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("training is deterministic and memorizes a single example") {
    MicroSetup ms(24, 2);
    Dataset one;
    one.split = "one";
    one.doc_index[ms.mr.doc.doc_uid] = 0;
    one.documents.push_back(ms.mr.doc);
    one.qa_pairs.push_back(ms.ds.qa_pairs[0]);

    TrainConfig tcfg;
    tcfg.epochs = 300;
    tcfg.batch_size = 1;
    tcfg.lr = 3e-3;
    tcfg.seed = 7;
    tcfg.eval_every = 50;
    tcfg.eval_beam = 1;
    tcfg.early_stop_em = 100.0;

    Model m1;
    m1.config = ms.model.config;
    m1.vocab = ms.vocab;
    m1.build();
    TrainResult r1 = train(m1, one, one, tcfg);

    Model m2;
    m2.config = ms.model.config;
    m2.vocab = ms.vocab;
    m2.build();
    TrainResult r2 = train(m2, one, one, tcfg);

    REQUIRE(r1.log.size() == r2.log.size());
    for (size_t i = 0; i < r1.log.size(); ++i)
        CHECK(r1.log[i].train_loss == r2.log[i].train_loss);

    CHECK(r1.log.back().train_loss < 0.01);
    CHECK(r1.best_dev_em == 100.0);

    // the memorized example reproduces the expected scale
    InputSequence seq = ms.seq(one.qa_pairs[0]);
    TrainingLabels labels = make_labels(one.qa_pairs[0], seq, ms.mr.doc, m1.config);
    nn::Tape t;
    Encoder enc = m1.make_encoder();
    EncodedVars e = enc.encode(t, seq);
    std::vector<int> tagged;
    for (const TaggedNumber& tn : labels.tree_vocab.tagged)
        tagged.push_back(tn.token_index);
    ScaleDistribution sd = predict_scale(t.val(e.cls), t.val(e.X), tagged,
                                         AnswerType::Arithmetic, m1.params);
    int best = 0;
    for (int i = 1; i < 5; ++i)
        if (sd.p[i] > sd.p[best]) best = i;
    CHECK(static_cast<Scale>(best) == Scale::Millions);
}

TEST_CASE("records failing label construction are skipped and counted") {
    MicroSetup ms;
    Dataset ds = ms.ds;
    QAPair bad = ds.qa_pairs[1];
    bad.qa_uid = "micro-bad";
    bad.evidence.clear();
    bad.gold_answer = std::vector<std::string>{"totally absent text"};
    ds.qa_pairs.push_back(bad);

    TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.batch_size = 4;
    tcfg.eval_every = 1;
    Model m;
    m.config = ms.model.config;
    m.vocab = ms.vocab;
    m.build();
    TrainResult r1 = train(m, ds, ds, tcfg);
    CHECK(r1.skipped_records == 1);

    Model m2;
    m2.config = ms.model.config;
    m2.vocab = ms.vocab;
    m2.build();
    TrainResult r2 = train(m2, ds, ds, tcfg);
    CHECK(r2.skipped_records == 1);
}

TEST_CASE("training on an empty dataset throws") {
    MicroSetup ms;
    Dataset empty;
    empty.split = "none";
    TrainConfig tcfg;
    Model m;
    m.config = ms.model.config;
    m.vocab = ms.vocab;
    m.build();
    CHECK_THROWS_AS(train(m, empty, empty, tcfg), no_trainable_examples);
}
