#include "dqa/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

#include "dqa/evaluation.hpp"
#include "dqa/inference.hpp"

namespace dqa {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void check_keys(const json& j, const std::set<std::string>& known,
                const std::string& where) {
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            throw config_error("unknown config key \"" + where + key + "\"");
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

template <size_t N>
void read_array(const json& j, const char* key, std::array<double, N>& out,
                const std::string& where) {
    if (!j.contains(key)) return;
    auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != N)
        throw config_error("config key \"" + where + key + "\" must have " +
                           std::to_string(N) + " entries");
    std::copy(v.begin(), v.end(), out.begin());
}

}  // namespace

RunConfig RunConfig::load(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw config_error(path + ": invalid JSON: " + e.what());
    }
    check_keys(j, {"seed", "generator", "encoder", "preprocess", "train", "model", "beam"},
               "");
    read_if(j, "seed", cfg.seed);
    read_if(j, "beam", cfg.beam);
    if (j.contains("generator")) {
        const json& g = j.at("generator");
        check_keys(g,
                   {"train_documents", "dev_documents", "test_documents", "qas_per_doc",
                    "words_per_page", "two_page_fraction", "type_mixture",
                    "scale_mixture", "render_images"},
                   "generator.");
        read_if(g, "train_documents", cfg.gen.train_documents);
        read_if(g, "dev_documents", cfg.gen.dev_documents);
        read_if(g, "test_documents", cfg.gen.test_documents);
        read_if(g, "qas_per_doc", cfg.gen.qas_per_doc);
        read_if(g, "words_per_page", cfg.gen.words_per_page);
        read_if(g, "two_page_fraction", cfg.gen.two_page_fraction);
        read_array(g, "type_mixture", cfg.gen.type_mixture, "generator.");
        read_array(g, "scale_mixture", cfg.gen.scale_mixture, "generator.");
        read_if(g, "render_images", cfg.gen.render_images);
    }
    if (j.contains("encoder")) {
        const json& e = j.at("encoder");
        check_keys(e, {"hidden", "layers", "heads", "ffn_dim", "layout_buckets",
                       "max_seq_len"},
                   "encoder.");
        read_if(e, "hidden", cfg.encoder.hidden);
        read_if(e, "layers", cfg.encoder.layers);
        read_if(e, "heads", cfg.encoder.heads);
        read_if(e, "ffn_dim", cfg.encoder.ffn_dim);
        read_if(e, "layout_buckets", cfg.encoder.layout_buckets);
        read_if(e, "max_seq_len", cfg.encoder.max_seq_len);
    }
    if (j.contains("preprocess")) {
        const json& p = j.at("preprocess");
        check_keys(p,
                   {"token_budget", "patch_grid", "vocab_min_freq", "table_row_overlap",
                    "table_col_overlap", "table_min_rows", "table_min_cols",
                    "table_numeric_density"},
                   "preprocess.");
        read_if(p, "token_budget", cfg.preprocess.token_budget);
        read_if(p, "patch_grid", cfg.preprocess.patch_grid);
        read_if(p, "vocab_min_freq", cfg.preprocess.vocab_min_freq);
        read_if(p, "table_row_overlap", cfg.preprocess.table.row_overlap);
        read_if(p, "table_col_overlap", cfg.preprocess.table.col_overlap);
        read_if(p, "table_min_rows", cfg.preprocess.table.min_rows);
        read_if(p, "table_min_cols", cfg.preprocess.table.min_cols);
        read_if(p, "table_numeric_density", cfg.preprocess.table.numeric_density);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t,
                   {"epochs", "batch_size", "lr", "clip_norm", "eval_beam", "eval_every",
                    "early_stop_em"},
                   "train.");
        read_if(t, "epochs", cfg.train.epochs);
        read_if(t, "batch_size", cfg.train.batch_size);
        read_if(t, "lr", cfg.train.lr);
        read_if(t, "clip_norm", cfg.train.clip_norm);
        read_if(t, "eval_beam", cfg.train.eval_beam);
        read_if(t, "eval_every", cfg.train.eval_every);
        read_if(t, "early_stop_em", cfg.train.early_stop_em);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, {"constants", "node_cap", "max_span_len", "count_unique_spans"},
                   "model.");
        read_if(m, "constants", cfg.constants);
        read_if(m, "node_cap", cfg.node_cap);
        read_if(m, "max_span_len", cfg.max_span_len);
        read_if(m, "count_unique_spans", cfg.count_unique_spans);
    }
    return cfg;
}

GeneratorConfig RunConfig::generator_for(const std::string& split, int documents) const {
    GeneratorConfig g;
    g.seed = seed;
    g.split = split;
    g.document_count = documents;
    g.qas_per_doc = gen.qas_per_doc;
    g.words_per_page = gen.words_per_page;
    g.two_page_fraction = gen.two_page_fraction;
    g.type_mixture = gen.type_mixture;
    g.scale_mixture = gen.scale_mixture;
    g.render_images = gen.render_images;
    return g;
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m;
    m.encoder = encoder;
    m.encoder.seed = seed;
    m.preprocess = preprocess;
    m.constants = constants;
    m.node_cap = node_cap;
    m.max_span_len = max_span_len;
    m.count_unique_spans = count_unique_spans;
    return m;
}

int cmd_generate(const RunConfig& cfg, const std::string& out_dir) {
    const std::pair<std::string, int> splits[] = {
        {"train", cfg.gen.train_documents},
        {"dev", cfg.gen.dev_documents},
        {"test", cfg.gen.test_documents},
    };
    for (const auto& [name, count] : splits) {
        if (count <= 0) continue;
        GeneratedSplit split = generate_dataset(cfg.generator_for(name, count));
        write_split(split, out_dir);
        std::cout << name << ": " << split.manifest.document_count << " documents, "
                  << split.manifest.qa_count << " qa pairs\n";
    }
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& dataset_dir,
              const std::string& out_dir) {
    Dataset train_ds = load_dataset(dataset_dir + "/train.json");
    Dataset dev_ds = load_dataset(dataset_dir + "/dev.json");

    Model model;
    model.config = cfg.model_config();
    model.config.preprocess.image_base_dir = dataset_dir;
    model.vocab = Vocab::build(train_ds, cfg.preprocess.vocab_min_freq);
    model.config.encoder.vocab_size = model.vocab.size();
    model.build();

    fs::create_directories(out_dir);
    TrainResult result =
        train(model, train_ds, dev_ds, cfg.train, out_dir + "/train_log.jsonl");
    save_checkpoint(model, out_dir + "/checkpoint.bin");

    std::cout << "trained on " << train_ds.qa_pairs.size() - result.skipped_records
              << " examples (" << result.skipped_records << " skipped)\n";
    std::cout << "best dev EM " << result.best_dev_em << " F1 " << result.best_dev_f1
              << " at epoch " << result.best_epoch << "\n";
    std::cout << "checkpoint: " << out_dir << "/checkpoint.bin\n";
    return 0;
}

int cmd_predict(const RunConfig& cfg, const std::string& checkpoint_path,
                const std::string& dataset_file, const std::string& out_file) {
    Model model = load_checkpoint(checkpoint_path);
    model.config.preprocess.image_base_dir =
        fs::path(dataset_file).parent_path().string();
    Dataset ds = load_dataset(dataset_file);
    int failures = predict_batch(ds, model, out_file, cfg.beam);
    std::cout << ds.qa_pairs.size() << " predictions written to " << out_file;
    if (failures) std::cout << " (" << failures << " failed)";
    std::cout << "\n";
    return failures > 0 ? 1 : 0;
}

int cmd_evaluate(const std::string& gold_file, const std::string& pred_file,
                 const std::string& report_out) {
    Dataset gold = load_dataset(gold_file);
    EvalReport rep = evaluate_file(gold, pred_file);
    std::cout << rep.to_table();
    if (!report_out.empty()) {
        std::ofstream out(report_out, std::ios::binary);
        if (!out) throw error("cannot write report: " + report_out);
        out << rep.to_json() << "\n";
        std::cout << "report: " << report_out << "\n";
    } else {
        std::cout << rep.to_json() << "\n";
    }
    return 0;
}

int cmd_inspect(const RunConfig& cfg, const std::string& dataset_file,
                const std::string& qa_uid, const std::string& checkpoint_path) {
    Dataset ds = load_dataset(dataset_file);
    const QAPair* qa = nullptr;
    for (const QAPair& q : ds.qa_pairs)
        if (q.qa_uid == qa_uid) qa = &q;
    if (!qa) throw unknown_uid("qa uid not found: " + qa_uid);
    const Document& doc = ds.document_of(*qa);

    Model model;
    bool have_params = !checkpoint_path.empty();
    if (have_params) {
        model = load_checkpoint(checkpoint_path);
    } else {
        model.config = cfg.model_config();
        model.vocab = Vocab::build(ds, cfg.preprocess.vocab_min_freq);
        model.config.encoder.vocab_size = model.vocab.size();
    }
    model.config.preprocess.image_base_dir = fs::path(dataset_file).parent_path().string();

    InputSequence seq = assemble_input(qa->question, doc, model.vocab,
                                       model.config.preprocess);
    std::cout << "qa " << qa->qa_uid << " (" << to_string(qa->answer_type) << ", scale "
              << (qa->scale == Scale::None ? "none" : to_string(qa->scale)) << ")\n";
    std::cout << "question: " << qa->question << "\n";
    std::cout << "sequence: " << seq.length() << " tokens (question "
              << seq.question_range.size() << ", table " << seq.table_range.size()
              << ", text " << seq.text_range.size() << ", visual "
              << seq.visual_range.size() << "), " << seq.number_candidates.size()
              << " number candidates\n";

    auto word_text = [&](int i) -> std::string {
        const TokenSource& src = seq.tokens[i].source;
        if (!src.is_word() || src.page_index < 0) return "";
        for (const Page& p : doc.pages)
            if (p.page_index == src.page_index)
                return p.blocks[static_cast<size_t>(src.block_id)]
                    .words[static_cast<size_t>(src.word_index)]
                    .text;
        return "";
    };

    try {
        TrainingLabels labels = make_labels(*qa, seq, doc, model.config);
        if (labels.span)
            std::cout << "gold span tokens: [" << labels.span->first << ", "
                      << labels.span->second << "] \""
                      << word_text(labels.span->first) << " ...\"\n";
        if (labels.bio) {
            std::cout << "gold tags:";
            std::vector<int> rows = seq.document_token_indices();
            for (size_t i = 0; i < rows.size(); ++i)
                if ((*labels.bio)[i] != kTagO)
                    std::cout << " " << rows[i] << ((*labels.bio)[i] == kTagB ? "/B" : "/I")
                              << "(" << word_text(rows[i]) << ")";
            std::cout << "\n";
        }
        if (labels.gold_tree)
            std::cout << "gold tree: " << tree_to_infix(labels.gold_tree) << " = "
                      << execute(labels.gold_tree) << "\n";
    } catch (const error& e) {
        std::cout << "labels: unavailable (" << e.what() << ")\n";
    }

    if (have_params) {
        nn::Tape t;
        Encoder encoder = model.make_encoder();
        EncodedVars enc = encoder.encode(t, seq);
        HeadDistribution hd = predict_head(t.val(enc.cls), model.params);
        std::cout << "head probabilities:";
        for (int i = 0; i < 4; ++i)
            std::cout << " " << to_string(static_cast<AnswerType>(i)) << "="
                      << hd.p[static_cast<size_t>(i)];
        std::cout << "\n";

        Answer ans = answer_question(doc, qa->question, model, cfg.beam);
        if (ans.answer_type == AnswerType::Arithmetic && !ans.degraded) {
            // re-decode to show the winning tree
            Heads heads = model.make_heads();
            TagSequence ts = tag_bio(t, heads, enc);
            std::vector<TokenSpan> spans = decode_bio(ts.argmax(), seq);
            std::set<int> covered;
            for (const TokenSpan& s : spans)
                for (int i = s.begin; i < s.end; ++i) covered.insert(i);
            TreeVocabulary tv;
            tv.constants = model.config.constants;
            std::map<int, int> row_pos;
            for (size_t i = 0; i < enc.doc_rows.size(); ++i)
                row_pos[enc.doc_rows[i]] = static_cast<int>(i);
            for (const NumberToken& nt : seq.number_candidates)
                if (covered.count(nt.token_index))
                    tv.tagged.push_back({row_pos.at(nt.token_index), nt.value});
            nn::Var doc_mat = enc.doc_rows.empty()
                                  ? enc.cls
                                  : t.gather_rows(enc.X, enc.doc_rows);
            TreeDecoder dec = model.make_tree_decoder();
            nn::Var vemb = dec.vocab_embeddings(t, doc_mat, tv);
            auto cands =
                dec.generate(t, enc.cls, doc_mat, vemb, tv, cfg.beam, model.config.node_cap);
            if (!cands.empty()) {
                std::cout << "decoded tree: " << tree_to_infix(cands.front().tree)
                          << "\n";
                std::cout << "pre-order: "
                          << preorder_to_json(preorder(cands.front().tree)) << "\n";
            }
        }
        std::cout << "predicted type: " << to_string(ans.answer_type) << "\n";
        std::cout << "predicted answer: " << ans.display() << "\n";
        if (ans.canonical_value)
            std::cout << "canonical value: " << *ans.canonical_value << "\n";
        std::cout << "score: " << ans.score << (ans.degraded ? " (degraded)" : "") << "\n";
    }
    return 0;
}

}  // namespace dqa
