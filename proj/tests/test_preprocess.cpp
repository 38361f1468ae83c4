#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dqa/preprocess.hpp"
#include "dqa/synthgen.hpp"
#include "fixtures.hpp"

using namespace dqa;
using namespace dqa::testing;

TEST_CASE("parse_number") {
    CHECK(parse_number("1,320") == 1320.0);
    CHECK(parse_number("(45,333)") == -45333.0);
    CHECK(parse_number("Wireless") == std::nullopt);
    CHECK(parse_number("-14") == -14.0);
    CHECK(parse_number("$12,000") == 12000.0);
    CHECK(parse_number("57.3%") == 57.3);
    CHECK(parse_number("(1,320)") == -1320.0);
    CHECK(parse_number("2018") == 2018.0);
    CHECK(parse_number("2017-2019") == std::nullopt);
    CHECK(parse_number("") == std::nullopt);
    CHECK(parse_number(".") == std::nullopt);
    CHECK(parse_number("1.2.3") == std::nullopt);
    CHECK(parse_number("3") == 3.0);
}

TEST_CASE("tfidf tokenization is lowercase alphanumeric runs") {
    auto toks = tfidf_tokenize("The Wireless segment, 2019 (restated)!");
    CHECK(toks == std::vector<std::string>{"the", "wireless", "segment", "2019",
                                           "restated"});
}

namespace {
Page aligned_grid_page(int rows, int cols, bool numeric) {
    std::vector<TextBlock> blocks;
    int id = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            blocks.push_back(mkline(id++, {numeric ? "1,234" : "word"}, 50 + c * 200,
                                    50 + r * 60));
    return mkpage(0, std::move(blocks));
}
}  // namespace

TEST_CASE("detect_table_blocks") {
    SUBCASE("3x3 aligned numeric grid flags all nine blocks") {
        Page p = aligned_grid_page(3, 3, true);
        std::set<int> flagged = detect_table_blocks(p);
        CHECK(flagged.size() == 9);
    }
    SUBCASE("single paragraph block flags nothing") {
        Page p = mkpage(0, {mkline(0, {"just", "some", "prose", "words"}, 20, 50)});
        CHECK(detect_table_blocks(p).empty());
    }
    SUBCASE("aligned grid of words fails the numeric gate") {
        Page p = aligned_grid_page(3, 3, false);
        CHECK(detect_table_blocks(p).empty());
    }
    SUBCASE("one row is not a table") {
        Page p = aligned_grid_page(1, 3, true);
        CHECK(detect_table_blocks(p).empty());
    }
    SUBCASE("idempotent") {
        MicroReport mr = micro_report();
        std::set<int> once = detect_table_blocks(mr.doc.pages[0]);
        flag_tables(mr.doc);
        std::set<int> twice = detect_table_blocks(mr.doc.pages[0]);
        CHECK(once == twice);
        CHECK(once == std::set<int>{0, 1, 2, 3, 4, 5, 6, 7, 8});
    }
}

TEST_CASE("rank_text_blocks") {
    TextBlock b0 = mkline(0, {"revenue", "grew", "strongly"}, 20, 20);
    TextBlock b1 = mkline(1, {"spectrum", "licenses", "expire"}, 20, 60);
    TextBlock b2 = mkline(2, {"the", "board", "met"}, 20, 100);
    std::vector<const TextBlock*> blocks{&b0, &b1, &b2};

    SUBCASE("a rare shared term ranks its block first") {
        auto order = rank_text_blocks("when do spectrum licenses expire ?", blocks);
        CHECK(order[0] == 1);
    }
    SUBCASE("no shared terms preserves reading order") {
        auto order = rank_text_blocks("completely unrelated question", blocks);
        CHECK(order == std::vector<int>{0, 1, 2});
    }
    SUBCASE("output is a permutation") {
        auto order = rank_text_blocks("revenue and spectrum", blocks);
        std::vector<int> sorted = order;
        std::sort(sorted.begin(), sorted.end());
        CHECK(sorted == std::vector<int>{0, 1, 2});
    }
}

TEST_CASE("rank_text_blocks matches a brute-force cosine oracle") {
    // five blocks with controlled overlap against the question terms
    std::vector<TextBlock> owned;
    owned.push_back(mkline(0, {"alpha", "beta", "gamma"}, 20, 20));
    owned.push_back(mkline(1, {"alpha", "alpha", "delta"}, 20, 60));
    owned.push_back(mkline(2, {"beta", "beta", "beta"}, 20, 100));
    owned.push_back(mkline(3, {"epsilon", "zeta"}, 20, 140));
    owned.push_back(mkline(4, {"alpha", "beta"}, 20, 180));
    std::vector<const TextBlock*> blocks;
    for (const TextBlock& b : owned) blocks.push_back(&b);
    const std::string question = "alpha beta";

    // oracle: recompute tf-idf cosines directly
    const int n = 5;
    std::vector<std::map<std::string, int>> tf(n);
    std::map<std::string, int> df;
    for (int i = 0; i < n; ++i) {
        for (const Word& w : owned[static_cast<size_t>(i)].words) ++tf[static_cast<size_t>(i)][w.text];
        for (auto& [t, c] : tf[static_cast<size_t>(i)]) ++df[t];
    }
    auto idf = [&](const std::string& t) {
        int d = df.count(t) ? df.at(t) : 0;
        return std::log((1.0 + n) / (1.0 + d)) + 1.0;
    };
    std::map<std::string, int> qtf{{"alpha", 1}, {"beta", 1}};
    double qn = 0;
    for (auto& [t, c] : qtf) qn += c * idf(t) * c * idf(t);
    qn = std::sqrt(qn);
    std::vector<double> sim(n);
    for (int i = 0; i < n; ++i) {
        double dot = 0, bn = 0;
        for (auto& [t, c] : tf[static_cast<size_t>(i)]) {
            double w = c * idf(t);
            bn += w * w;
            if (qtf.count(t)) dot += w * qtf.at(t) * idf(t);
        }
        sim[static_cast<size_t>(i)] = dot > 0 ? dot / (qn * std::sqrt(bn)) : 0.0;
    }
    std::vector<int> expect{0, 1, 2, 3, 4};
    std::stable_sort(expect.begin(), expect.end(),
                     [&](int a, int b) { return sim[static_cast<size_t>(a)] > sim[static_cast<size_t>(b)]; });

    CHECK(rank_text_blocks(question, blocks) == expect);
}

TEST_CASE("select_major_table_page") {
    SUBCASE("single page") {
        MicroReport mr = micro_report();
        flag_tables(mr.doc);
        CHECK(select_major_table_page(mr.doc) == 0);
    }
    auto page_with_tables = [](int index, int rows) {
        Page p = aligned_grid_page(rows, 2, true);
        p.page_index = index;
        return p;
    };
    SUBCASE("page with more table blocks wins") {
        Document doc = mkdoc("d", {page_with_tables(0, 1), page_with_tables(1, 3)});
        // page 0 holds a single row: not a table at all
        flag_tables(doc);
        CHECK(select_major_table_page(doc) == 1);
    }
    SUBCASE("tie breaks to the earlier page") {
        Document doc = mkdoc("d", {page_with_tables(0, 3), page_with_tables(1, 3)});
        flag_tables(doc);
        CHECK(select_major_table_page(doc) == 0);
    }
    SUBCASE("no table anywhere falls back to page zero") {
        Document doc = mkdoc("d", {mkpage(0, {mkline(0, {"text"}, 10, 10)})});
        flag_tables(doc);
        CHECK(select_major_table_page(doc) == 0);
    }
}

TEST_CASE("assemble_input basic layout") {
    MicroReport mr = micro_report();
    Dataset ds = micro_dataset();
    Vocab vocab = Vocab::build(ds, 1);
    PreprocessConfig cfg;
    cfg.token_budget = 128;
    cfg.patch_grid = 2;

    InputSequence seq = assemble_input("What was the Wireless costs in 2019 ?",
                                       mr.doc, vocab, cfg);
    CHECK(seq.cls_index == 0);
    CHECK(seq.question_range.begin == 1);
    CHECK(seq.question_range.size() == 8);
    // table: 9 blocks (2+1+1)+(2+1+1)+(2+1+1) words = 12
    CHECK(seq.table_range.size() == 12);
    // text: caption 10 + segments 13
    CHECK(seq.text_range.size() == 23);
    CHECK(seq.visual_range.size() == 4);
    CHECK(seq.length() == 1 + 8 + 1 + 12 + 1 + 23 + 1 + 4);
    // ranges ordered and disjoint
    CHECK(seq.question_range.end <= seq.table_range.begin);
    CHECK(seq.table_range.end <= seq.text_range.begin);
    CHECK(seq.text_range.end <= seq.visual_range.begin);
    // number candidates: 2018 2019 1,102 1,320 950 1,731 and caption "2"
    CHECK(seq.number_candidates.size() == 7);
    for (const NumberToken& nt : seq.number_candidates)
        CHECK(seq.in_document(nt.token_index));

    SUBCASE("full provenance: every word token resolves to its source word") {
        for (int i = 0; i < seq.length(); ++i) {
            const Token& tok = seq.tokens[i];
            if (!tok.source.is_word() || tok.source.page_index < 0) continue;
            const Page& p = mr.doc.pages[static_cast<size_t>(tok.source.page_index)];
            REQUIRE(tok.source.block_id < static_cast<int>(p.blocks.size()));
            const TextBlock& b = p.blocks[static_cast<size_t>(tok.source.block_id)];
            REQUIRE(tok.source.word_index < static_cast<int>(b.words.size()));
            CHECK(b.words[static_cast<size_t>(tok.source.word_index)].bbox == tok.bbox);
        }
    }
    SUBCASE("number values round-trip through their source words") {
        for (const NumberToken& nt : seq.number_candidates) {
            const TokenSource& src = seq.tokens[nt.token_index].source;
            const Word& w = mr.doc.pages[static_cast<size_t>(src.page_index)]
                                .blocks[static_cast<size_t>(src.block_id)]
                                .words[static_cast<size_t>(src.word_index)];
            CHECK(parse_number(w.text) == nt.value);
        }
    }
}

TEST_CASE("assemble_input truncation drops lowest-ranked text blocks first") {
    MicroReport mr = micro_report();
    Dataset ds = micro_dataset();
    Vocab vocab = Vocab::build(ds, 1);
    PreprocessConfig cfg;
    cfg.patch_grid = 2;
    const std::string q = "What was the Wireless costs in 2019 ?";

    // oracle: the ranked text blocks of the flagged document
    Document flagged = mr.doc;
    flag_tables(flagged);
    std::vector<const TextBlock*> text_blocks;
    for (const Page& p : flagged.pages)
        for (const TextBlock& b : p.blocks)
            if (!b.is_table) text_blocks.push_back(&b);
    std::vector<int> ranked = rank_text_blocks(q, text_blocks);
    REQUIRE(ranked.size() == 2);

    // budget that fits the table plus exactly the top-ranked text block
    const int q_words = 8, markers = 4, patches = 4, table_words = 12;
    const int top_words = static_cast<int>(text_blocks[static_cast<size_t>(ranked[0])]->words.size());
    PreprocessConfig tight = cfg;
    tight.token_budget = q_words + markers + patches + table_words + top_words;
    InputSequence seq = assemble_input(q, mr.doc, vocab, tight);
    CHECK(seq.table_range.size() == table_words);
    CHECK(seq.text_range.size() == top_words);
    // the surviving text tokens come from the top-ranked block
    CHECK(seq.tokens[seq.text_range.begin].source.block_id ==
          text_blocks[static_cast<size_t>(ranked[0])]->block_id);

    SUBCASE("no table keeps the text section non-empty") {
        Document no_table = mkdoc(
            "d", {mkpage(0, {mkline(0, {"alpha", "beta"}, 20, 20),
                             mkline(1, {"gamma", "delta"}, 20, 60)})});
        InputSequence s2 = assemble_input("alpha ?", no_table, vocab, cfg);
        CHECK(s2.table_range.size() == 0);
        CHECK(s2.text_range.size() == 4);
    }
    SUBCASE("question plus markers over budget throws") {
        PreprocessConfig tiny = cfg;
        tiny.token_budget = 10;
        CHECK_THROWS_AS(assemble_input(q, mr.doc, vocab, tiny), budget_too_small);
    }
}

TEST_CASE("page_to_patches") {
    SUBCASE("uniform white image: all patches identical, darkness zero") {
        Image img;
        img.width = img.height = 64;
        img.channels = 1;
        img.pixels.assign(64 * 64, 255);
        auto patches = page_to_patches(img, 7);
        REQUIRE(patches.size() == 49);
        for (const PatchFeature& f : patches) {
            CHECK(f.mean_r == doctest::Approx(1.0));
            CHECK(f.darkness == doctest::Approx(0.0));
        }
    }
    SUBCASE("left black / right white at grid 2") {
        Image img;
        img.width = img.height = 100;
        img.channels = 1;
        img.pixels.assign(100 * 100, 255);
        for (int y = 0; y < 100; ++y)
            for (int x = 0; x < 50; ++x) img.pixels[static_cast<size_t>(y) * 100 + x] = 0;
        auto patches = page_to_patches(img, 2);
        CHECK(patches[0].darkness == doctest::Approx(1.0));
        CHECK(patches[1].darkness == doctest::Approx(0.0));
        CHECK(patches[2].darkness == doctest::Approx(1.0));
        CHECK(patches[3].darkness == doctest::Approx(0.0));
        CHECK(patches[0].bbox.x1 == 500);
    }
    SUBCASE("rendered page matches a brute-force pixel-mean oracle") {
        MicroReport mr = micro_report();
        Image img = render_page(mr.doc.pages[0]);
        const int grid = 4;
        auto patches = page_to_patches(img, grid);
        // oracle: nearest-neighbor resample then plain per-pixel means
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx) {
                double sum = 0.0;
                int count = 0;
                for (int y = gy * 224 / grid; y < (gy + 1) * 224 / grid; ++y)
                    for (int x = gx * 224 / grid; x < (gx + 1) * 224 / grid; ++x) {
                        int sy = static_cast<int>(static_cast<int64_t>(y) * img.height / 224);
                        int sx = static_cast<int>(static_cast<int64_t>(x) * img.width / 224);
                        sum += img.pixels[static_cast<size_t>(sy) * img.width + sx] / 255.0;
                        ++count;
                    }
                const PatchFeature& f = patches[static_cast<size_t>(gy) * grid + gx];
                CHECK(f.mean_r == doctest::Approx(sum / count).epsilon(1e-6));
                CHECK(f.darkness == doctest::Approx(1.0 - sum / count).epsilon(1e-6));
            }
    }
    SUBCASE("pnm io round trip and decode errors") {
        Image img;
        img.width = 3;
        img.height = 2;
        img.channels = 1;
        img.pixels = {0, 100, 200, 50, 150, 250};
        std::string path = "test_patch.pgm";
        save_pgm(img, path);
        Image back = load_pnm(path);
        CHECK(back.pixels == img.pixels);
        std::remove(path.c_str());
        CHECK_THROWS_AS(load_pnm("does-not-exist.pgm"), image_decode_error);
    }
}

TEST_CASE("vocabulary maps rare numerics to NUM and rare words to UNK") {
    Dataset ds = micro_dataset();
    Vocab vocab = Vocab::build(ds, 2);  // min frequency 2
    // "the" appears many times
    CHECK(vocab.id_of("the") >= SpecialIds::kFirstWordId);
    CHECK(vocab.id_of("The") == vocab.id_of("the"));
    // "1,320" appears once in the doc + once in a question? -> rare numeric
    CHECK(vocab.id_of("8,888,888") == SpecialIds::kNum);
    CHECK(vocab.id_of("zzzunseen") == SpecialIds::kUnk);
    Vocab v1 = Vocab::build(ds, 1);
    CHECK(v1.id_of("1,320") >= SpecialIds::kFirstWordId);
}
