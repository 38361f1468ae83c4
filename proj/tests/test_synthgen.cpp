#include <doctest.h>

#include <cmath>
#include <set>

#include "dqa/synthgen.hpp"
#include "dqa/training.hpp"
#include "dqa/treegen.hpp"
#include "rational.hpp"

using namespace dqa;

namespace {
GeneratorConfig small_config(int docs = 20, uint64_t seed = 7) {
    GeneratorConfig cfg;
    cfg.seed = seed;
    cfg.split = "train";
    cfg.document_count = docs;
    cfg.qas_per_doc = 6;
    cfg.words_per_page = 60;
    cfg.render_images = false;
    return cfg;
}
}  // namespace

TEST_CASE("generation is deterministic for a fixed seed") {
    GeneratedSplit a = generate_dataset(small_config());
    GeneratedSplit b = generate_dataset(small_config());
    CHECK(serialize_dataset(a.dataset) == serialize_dataset(b.dataset));
    CHECK(a.manifest.to_json() == b.manifest.to_json());
    GeneratedSplit c = generate_dataset(small_config(20, 8));
    CHECK(serialize_dataset(a.dataset) != serialize_dataset(c.dataset));
}

TEST_CASE("generated datasets validate and counts match the manifest") {
    GeneratedSplit g = generate_dataset(small_config());
    CHECK(validate_dataset(g.dataset).empty());
    CHECK(g.manifest.document_count == 20);
    CHECK(g.manifest.qa_count == 120);
    Dataset reloaded = parse_dataset_json(serialize_dataset(g.dataset), "mem");
    CHECK(static_cast<int>(reloaded.documents.size()) == g.manifest.document_count);
    CHECK(static_cast<int>(reloaded.qa_pairs.size()) == g.manifest.qa_count);
    int by_type_total = 0;
    for (const auto& [name, count] : g.manifest.type_counts) by_type_total += count;
    CHECK(by_type_total == g.manifest.qa_count);
}

TEST_CASE("every arithmetic derivation executes to its gold answer exactly") {
    GeneratedSplit g = generate_dataset(small_config(40));
    int checked = 0;
    for (const QAPair& qa : g.dataset.qa_pairs) {
        if (qa.answer_type != AnswerType::Arithmetic) continue;
        REQUIRE(qa.derivation.has_value());
        CHECK(execute(parse_derivation(*qa.derivation)) == qa.gold_number());
        // derivations also agree with the exact rational oracle
        double oracle = dqa::testing::rational_eval(*qa.derivation).to_double();
        CHECK(std::abs(qa.gold_number() - oracle) <=
              1e-9 * std::max(1.0, std::abs(oracle)));
        ++checked;
    }
    CHECK(checked > 20);
}

TEST_CASE("answer-type mixture approaches the configured distribution") {
    GeneratorConfig cfg = small_config(1700, 21);
    cfg.qas_per_doc = 6;  // 10200 qas
    GeneratedSplit g = generate_dataset(cfg);
    const int total = g.manifest.qa_count;
    REQUIRE(total >= 10000);
    auto frac = [&](const char* name) {
        auto it = g.manifest.type_counts.find(name);
        return it == g.manifest.type_counts.end()
                   ? 0.0
                   : static_cast<double>(it->second) / total;
    };
    CHECK(std::abs(frac("span") - 0.43) < 0.02);
    CHECK(std::abs(frac("multi-span") - 0.13) < 0.02);
    CHECK(std::abs(frac("count") - 0.02) < 0.02);
    CHECK(std::abs(frac("arithmetic") - 0.42) < 0.02);
}

TEST_CASE("manifest table flags are exactly recovered by the detector") {
    GeneratedSplit g = generate_dataset(small_config(30, 3));
    int pages = 0;
    for (size_t d = 0; d < g.dataset.documents.size(); ++d) {
        const Document& doc = g.dataset.documents[d];
        const DocManifest& dman = g.manifest.documents[d];
        REQUIRE(dman.uid == doc.doc_uid);
        for (const Page& page : doc.pages) {
            std::set<int> detected = detect_table_blocks(page);
            std::set<int> truth;
            for (const PageManifest& pm : dman.pages)
                if (pm.page_index == page.page_index)
                    truth.insert(pm.table_blocks.begin(), pm.table_blocks.end());
            CHECK(detected == truth);
            ++pages;
        }
    }
    CHECK(pages >= 30);
}

TEST_CASE("every generated qa yields labels without errors") {
    GeneratedSplit g = generate_dataset(small_config(15, 5));
    Vocab vocab = Vocab::build(g.dataset, 2);
    ModelConfig mcfg;
    mcfg.preprocess.token_budget = 512;
    mcfg.preprocess.patch_grid = 2;
    for (const QAPair& qa : g.dataset.qa_pairs) {
        const Document& doc = g.dataset.document_of(qa);
        InputSequence seq = assemble_input(qa.question, doc, vocab, mcfg.preprocess);
        TrainingLabels labels = make_labels(qa, seq, doc, mcfg);
        CHECK(labels.head == qa.answer_type);
        switch (qa.answer_type) {
            case AnswerType::Span:
                CHECK(labels.span.has_value());
                CHECK(!labels.bio.has_value());
                break;
            case AnswerType::Spans:
            case AnswerType::Counting:
                CHECK(labels.bio.has_value());
                CHECK(!labels.span.has_value());
                break;
            case AnswerType::Arithmetic: {
                CHECK(labels.bio.has_value());
                REQUIRE(labels.gold_tree != nullptr);
                CHECK(execute(labels.gold_tree) == qa.gold_number());
                break;
            }
        }
    }
}

TEST_CASE("render_page") {
    SUBCASE("empty page renders all white") {
        Page p;
        p.page_index = 0;
        p.width = 50;
        p.height = 40;
        Image img = render_page(p);
        for (uint8_t v : img.pixels) CHECK(v == 255);
    }
    SUBCASE("a full-page block darkens every patch") {
        Page p;
        p.page_index = 0;
        p.width = 64;
        p.height = 64;
        TextBlock b;
        b.block_id = 0;
        b.words.push_back({"ink", BoundingBox{0, 0, 1000, 1000}});
        b.bbox = b.words[0].bbox;
        p.blocks.push_back(b);
        Image img = render_page(p);
        for (const PatchFeature& f : page_to_patches(img, 3))
            CHECK(f.darkness > 0.8);
    }
    SUBCASE("two renders are identical") {
        GeneratedSplit g = generate_dataset(small_config(2, 9));
        const Page& p = g.dataset.documents[0].pages[0];
        Image a = render_page(p);
        Image b = render_page(p);
        CHECK(a.pixels == b.pixels);
    }
}

TEST_CASE("config validation") {
    GeneratorConfig cfg = small_config();
    cfg.type_mixture = {0.5, 0.5, 0.5, 0.5};
    CHECK_THROWS_AS(generate_dataset(cfg), config_error);
    GeneratorConfig cfg2 = small_config();
    cfg2.document_count = 0;
    CHECK_THROWS_AS(generate_dataset(cfg2), config_error);
}
