#pragma once

#include <string>
#include <vector>

#include "dqa/docmodel.hpp"

namespace dqa::testing {

inline Word mkword(const std::string& text, int x0, int y0, int x1, int y1) {
    return Word{text, BoundingBox{x0, y0, x1, y1}};
}

// one-line block; bbox is the union of word boxes
inline TextBlock mkblock(int id, const std::vector<Word>& words) {
    TextBlock b;
    b.block_id = id;
    b.words = words;
    b.bbox = words.front().bbox;
    for (const Word& w : words) {
        b.bbox.x0 = std::min(b.bbox.x0, w.bbox.x0);
        b.bbox.y0 = std::min(b.bbox.y0, w.bbox.y0);
        b.bbox.x1 = std::max(b.bbox.x1, w.bbox.x1);
        b.bbox.y1 = std::max(b.bbox.y1, w.bbox.y1);
    }
    return b;
}

// words laid out left to right on one line starting at (x, y)
inline TextBlock mkline(int id, const std::vector<std::string>& words, int x, int y,
                        int char_w = 8, int h = 18) {
    std::vector<Word> ws;
    int cx = x;
    for (const std::string& t : words) {
        int w = static_cast<int>(t.size()) * char_w;
        ws.push_back(mkword(t, cx, y, cx + w, y + h));
        cx += w + char_w;
    }
    return mkblock(id, ws);
}

inline Page mkpage(int index, std::vector<TextBlock> blocks, int w = 300, int h = 388) {
    Page p;
    p.page_index = index;
    p.width = w;
    p.height = h;
    p.blocks = std::move(blocks);
    return p;
}

inline Document mkdoc(const std::string& uid, std::vector<Page> pages) {
    Document d;
    d.doc_uid = uid;
    d.pages = std::move(pages);
    return d;
}

// A miniature one-page report shaped like the running example: a 2x2-year
// table whose 2019 column holds 1,320 and 1,731, a unit line reading
// "in millions", and a caption that provides a bare year-count number.
struct MicroReport {
    Document doc;
    QAPair sum_qa;       // arithmetic: 1,320 + 1,731 = 3051, scale millions
    QAPair span_qa;      // span: the 1,320 cell
    QAPair spans_qa;     // multi-span: segment names
    QAPair count_qa;     // counting over the segments
    int cell_1320_block = 0;
    int cell_1731_block = 0;
};

inline MicroReport micro_report() {
    MicroReport mr;
    std::vector<TextBlock> blocks;
    int id = 0;
    // header row
    blocks.push_back(mkline(id++, {"in", "millions"}, 20, 100));
    blocks.push_back(mkline(id++, {"2018"}, 400, 100));
    blocks.push_back(mkline(id++, {"2019"}, 600, 100));
    // data rows
    blocks.push_back(mkline(id++, {"Wireless", "costs"}, 20, 160));
    blocks.push_back(mkline(id++, {"1,102"}, 400, 160));
    mr.cell_1320_block = id;
    blocks.push_back(mkline(id++, {"1,320"}, 600, 160));
    blocks.push_back(mkline(id++, {"Spectrum", "fees"}, 20, 220));
    blocks.push_back(mkline(id++, {"950"}, 400, 220));
    mr.cell_1731_block = id;
    blocks.push_back(mkline(id++, {"1,731"}, 600, 220));
    // caption and a segment enumeration
    blocks.push_back(mkline(id++, {"The", "table", "above", "reports", "figures",
                                   "for", "2", "fiscal", "years", "."},
                            20, 300, 6, 14));
    blocks.push_back(mkline(id++, {"The", "Company", "operates", "three",
                                   "reportable", "segments", ":", "PSG", ",", "ASG",
                                   "and", "ISG", "."},
                            20, 340, 6, 14));
    mr.doc = mkdoc("micro-d0", {mkpage(0, std::move(blocks), 800, 500)});

    mr.sum_qa.qa_uid = "micro-q0";
    mr.sum_qa.doc_uid = "micro-d0";
    mr.sum_qa.question =
        "What was the total Wireless costs and Spectrum fees in 2019 ?";
    mr.sum_qa.answer_type = AnswerType::Arithmetic;
    mr.sum_qa.scale = Scale::Millions;
    mr.sum_qa.derivation = "1,320 + 1,731";
    mr.sum_qa.gold_answer = 3051.0;
    mr.sum_qa.evidence.push_back({0, mr.cell_1320_block, 0, 1});
    mr.sum_qa.evidence.push_back({0, mr.cell_1731_block, 0, 1});

    mr.span_qa.qa_uid = "micro-q1";
    mr.span_qa.doc_uid = "micro-d0";
    mr.span_qa.question = "What was the Wireless costs in 2019 ?";
    mr.span_qa.answer_type = AnswerType::Span;
    mr.span_qa.scale = Scale::Millions;
    mr.span_qa.gold_answer = std::vector<std::string>{"1,320"};
    mr.span_qa.evidence.push_back({0, mr.cell_1320_block, 0, 1});

    mr.spans_qa.qa_uid = "micro-q2";
    mr.spans_qa.doc_uid = "micro-d0";
    mr.spans_qa.question = "What are the reportable segments of the Company ?";
    mr.spans_qa.answer_type = AnswerType::Spans;
    mr.spans_qa.scale = Scale::None;
    mr.spans_qa.gold_answer = std::vector<std::string>{"PSG", "ASG", "ISG"};
    mr.spans_qa.evidence.push_back({0, 10, 7, 8});
    mr.spans_qa.evidence.push_back({0, 10, 9, 10});
    mr.spans_qa.evidence.push_back({0, 10, 11, 12});

    mr.count_qa = mr.spans_qa;
    mr.count_qa.qa_uid = "micro-q3";
    mr.count_qa.question = "How many reportable segments does the Company operate ?";
    mr.count_qa.answer_type = AnswerType::Counting;
    mr.count_qa.gold_answer = 3.0;
    return mr;
}

inline Dataset micro_dataset() {
    MicroReport mr = micro_report();
    Dataset ds;
    ds.split = "micro";
    ds.doc_index[mr.doc.doc_uid] = 0;
    ds.documents.push_back(mr.doc);
    ds.qa_pairs = {mr.sum_qa, mr.span_qa, mr.spans_qa, mr.count_qa};
    return ds;
}

}  // namespace dqa::testing
