#include "dqa/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "dqa/treegen.hpp"

namespace dqa {

namespace {

using json = nlohmann::ordered_json;

// page geometry in pixels
constexpr int kPageW = 300;
constexpr int kPageH = 388;
constexpr int kCharW = 3;
constexpr int kWordH = 8;
constexpr int kLinePitch = 12;
constexpr int kRowPitch = 14;
constexpr int kMarginX = 16;
constexpr int kTextMaxX = 284;

const std::vector<std::string> kCompanies = {
    "Alpine",  "Harbor",  "Pinnacle", "Sterling", "Meridian",
    "Vanguard", "Cascade", "Summit",   "Beacon",   "Crestline",
};

const std::vector<std::vector<std::string>> kMetricLabels = {
    {"Revenue"},
    {"Cost", "of", "sales"},
    {"Gross", "profit"},
    {"Operating", "expenses"},
    {"Net", "income"},
    {"Total", "assets"},
    {"Cash", "equivalents"},
    {"Accounts", "receivable"},
    {"Inventory"},
    {"Deferred", "revenue"},
    {"Interest", "expense"},
    {"Income", "tax"},
    {"Research", "expenses"},
    {"Marketing", "costs"},
    {"Administrative", "expenses"},
    {"Capital", "expenditure"},
    {"Term", "loans"},
    {"Lease", "commitments"},
    {"Short", "term", "investments"},
    {"Raw", "materials"},
    {"Finished", "goods"},
    {"Accrued", "liabilities"},
    {"Goodwill"},
    {"Intangible", "assets"},
};

const std::vector<std::string> kSegmentPool = {
    "Wireless", "Imaging",  "Automotive", "Consumer", "Enterprise", "Networks",
    "Security", "Storage",  "Industrial", "Medical",  "Aerospace",  "Logistics",
};

const std::vector<std::vector<std::string>> kReasonPhrases = {
    {"strong", "demand", "growth"},
    {"higher", "sales", "volume"},
    {"new", "product", "launches"},
    {"favorable", "currency", "movements"},
    {"lower", "input", "costs"},
    {"improved", "pricing", "discipline"},
    {"expansion", "into", "new", "markets"},
    {"increased", "service", "contracts"},
};

const std::vector<std::vector<std::string>> kFillerSentences = {
    {"The", "Company", "maintains", "a", "diversified", "portfolio", "of",
     "long", "term", "contracts", "."},
    {"Management", "reviews", "operating", "results", "on", "a", "quarterly",
     "basis", "."},
    {"These", "statements", "should", "be", "read", "together", "with", "the",
     "accompanying", "notes", "."},
    {"The", "Company", "applies", "consistent", "accounting", "policies",
     "across", "all", "reporting", "periods", "."},
    {"Market", "conditions", "remained", "broadly", "stable", "during", "the",
     "reporting", "period", "."},
    {"The", "board", "approved", "the", "annual", "budget", "after", "a",
     "detailed", "review", "."},
    {"Liquidity", "remains", "sufficient", "to", "meet", "anticipated",
     "working", "capital", "needs", "."},
    {"No", "material", "events", "occurred", "after", "the", "balance",
     "sheet", "date", "."},
    {"The", "auditors", "issued", "an", "unqualified", "opinion", "on", "the",
     "financial", "statements", "."},
    {"Foreign", "operations", "are", "translated", "at", "average", "exchange",
     "rates", "."},
    {"Credit", "risk", "is", "monitored", "through", "established",
     "counterparty", "limits", "."},
    {"Certain", "prior", "year", "amounts", "have", "been", "reclassified",
     "for", "comparability", "."},
};

struct Rng {
    std::mt19937_64 g;
    explicit Rng(uint64_t seed) : g(seed) {}
    double uniform() { return (g() >> 11) * 0x1.0p-53; }
    int uniform_int(int lo, int hi) {  // inclusive
        return lo + static_cast<int>(g() % static_cast<uint64_t>(hi - lo + 1));
    }
    template <typename T>
    const T& pick(const std::vector<T>& v) {
        return v[static_cast<size_t>(uniform_int(0, static_cast<int>(v.size()) - 1))];
    }
    int pick_weighted(const double* w, int n) {
        double u = uniform();
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += w[i];
            if (u < acc) return i;
        }
        return n - 1;
    }
};

uint64_t mix_seed(uint64_t seed, const std::string& split, uint64_t idx) {
    uint64_t h = seed ^ 0x9e3779b97f4a7c15ull;
    for (unsigned char c : split) h = (h ^ c) * 1099511628211ull;
    h ^= idx + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h;
}

std::string format_group(long long v) {  // absolute value with separators
    std::string digits = std::to_string(v);
    std::string out;
    int count = 0;
    for (int i = static_cast<int>(digits.size()) - 1; i >= 0; --i) {
        out.push_back(digits[static_cast<size_t>(i)]);
        if (++count % 3 == 0 && i > 0) out.push_back(',');
    }
    std::reverse(out.begin(), out.end());
    return out;
}

std::string cell_text(long long v) {
    return v < 0 ? "(" + format_group(-v) + ")" : format_group(v);
}

std::string operand_text(long long v) {
    return v < 0 ? "-" + format_group(-v) : format_group(v);
}

int to_grid(int px, int total) { return px * 1000 / total; }

struct PageBuilder {
    Page page;
    int next_y = 16;

    explicit PageBuilder(int index) {
        page.page_index = index;
        page.width = kPageW;
        page.height = kPageH;
    }

    BoundingBox word_box(int x_px, int y_px, const std::string& text) const {
        int x1 = x_px + static_cast<int>(text.size()) * kCharW;
        BoundingBox b;
        b.x0 = to_grid(x_px, kPageW);
        b.y0 = to_grid(y_px, kPageH);
        b.x1 = to_grid(x1, kPageW);
        b.y1 = to_grid(y_px + kWordH, kPageH);
        return b;
    }

    // one-line block at a fixed position; returns block_id
    int add_line_block(const std::vector<std::string>& words, int x_px, int y_px) {
        TextBlock blk;
        blk.block_id = static_cast<int>(page.blocks.size());
        int x = x_px;
        for (const std::string& w : words) {
            blk.words.push_back({w, word_box(x, y_px, w)});
            x += static_cast<int>(w.size()) * kCharW + kCharW;
        }
        blk.bbox = blk.words.front().bbox;
        for (const Word& w : blk.words) {
            blk.bbox.x0 = std::min(blk.bbox.x0, w.bbox.x0);
            blk.bbox.y0 = std::min(blk.bbox.y0, w.bbox.y0);
            blk.bbox.x1 = std::max(blk.bbox.x1, w.bbox.x1);
            blk.bbox.y1 = std::max(blk.bbox.y1, w.bbox.y1);
        }
        page.blocks.push_back(std::move(blk));
        return page.blocks.back().block_id;
    }

    // wrapped paragraph starting at next_y; returns block_id, advances next_y
    int add_paragraph(const std::vector<std::string>& words) {
        TextBlock blk;
        blk.block_id = static_cast<int>(page.blocks.size());
        int x = kMarginX;
        int y = next_y;
        for (const std::string& w : words) {
            int width = static_cast<int>(w.size()) * kCharW;
            if (x + width > kTextMaxX) {
                x = kMarginX;
                y += kLinePitch;
            }
            blk.words.push_back({w, word_box(x, y, w)});
            x += width + kCharW;
        }
        blk.bbox = blk.words.front().bbox;
        for (const Word& w : blk.words) {
            blk.bbox.x0 = std::min(blk.bbox.x0, w.bbox.x0);
            blk.bbox.y0 = std::min(blk.bbox.y0, w.bbox.y0);
            blk.bbox.x1 = std::max(blk.bbox.x1, w.bbox.x1);
            blk.bbox.y1 = std::max(blk.bbox.y1, w.bbox.y1);
        }
        page.blocks.push_back(std::move(blk));
        next_y = y + kLinePitch + 6;
        return page.blocks.back().block_id;
    }

    int word_count() const {
        int n = 0;
        for (const TextBlock& b : page.blocks) n += static_cast<int>(b.words.size());
        return n;
    }

    bool full() const { return next_y > kPageH - kLinePitch - 4; }
};

struct TableInfo {
    int page_index = 0;
    Scale scale = Scale::None;
    std::vector<int> years;
    std::vector<std::vector<std::string>> labels;      // row -> label words
    std::vector<std::vector<long long>> values;        // row x year
    std::vector<int> label_block;                      // row -> block id
    std::vector<std::vector<int>> cell_block;          // row x year -> block id
    std::vector<bool> row_positive;
    std::vector<int> all_blocks;                       // ground truth flags
};

struct SegmentsInfo {
    int page_index = 0;
    int block_id = 0;
    std::vector<std::string> names;
    std::vector<std::pair<int, int>> name_spans;  // word index ranges
};

struct ReasonInfo {
    int page_index = 0;
    int block_id = 0;
    std::vector<std::string> label;
    int year = 0;
    std::vector<std::string> phrase;
    int phrase_begin = 0, phrase_end = 0;
};

const std::vector<std::string>& scale_caption_words(Scale s) {
    static const std::vector<std::string> none = {"Metric"};
    static const std::vector<std::string> thousand = {"in", "thousands"};
    static const std::vector<std::string> million = {"in", "millions"};
    static const std::vector<std::string> billion = {"in", "billions"};
    static const std::vector<std::string> percent = {"in", "percent"};
    switch (s) {
        case Scale::None: return none;
        case Scale::Thousands: return thousand;
        case Scale::Millions: return million;
        case Scale::Billions: return billion;
        case Scale::Percent: return percent;
    }
    return none;
}

TableInfo build_table(PageBuilder& pb, Rng& rng, Scale scale,
                      std::vector<int>& label_pool) {
    TableInfo info;
    info.page_index = pb.page.page_index;
    info.scale = scale;

    const int n_years = rng.uniform_int(2, 3);
    const int start_year = rng.uniform_int(2016, 2018);
    for (int i = 0; i < n_years; ++i) info.years.push_back(start_year + i);

    const int n_rows = std::min(rng.uniform_int(3, 5), static_cast<int>(label_pool.size()));

    // header row: unit caption in the corner plus year cells
    const int table_top = pb.next_y + 4;
    int y = table_top;
    pb.add_line_block(scale_caption_words(scale), kMarginX, y);
    info.all_blocks.push_back(pb.page.blocks.back().block_id);
    for (int j = 0; j < n_years; ++j) {
        int id = pb.add_line_block({std::to_string(info.years[j])}, 110 + j * 56, y);
        info.all_blocks.push_back(id);
    }
    y += kRowPitch;

    for (int r = 0; r < n_rows; ++r) {
        int pool_pos = rng.uniform_int(0, static_cast<int>(label_pool.size()) - 1);
        int label_idx = label_pool[static_cast<size_t>(pool_pos)];
        label_pool.erase(label_pool.begin() + pool_pos);
        info.labels.push_back(kMetricLabels[static_cast<size_t>(label_idx)]);

        bool positive_row = (r == 0) || rng.uniform() > 0.25;
        info.row_positive.push_back(positive_row);

        int lid = pb.add_line_block(info.labels.back(), kMarginX, y);
        info.label_block.push_back(lid);
        info.all_blocks.push_back(lid);

        std::vector<long long> row_vals;
        std::vector<int> row_blocks;
        for (int j = 0; j < n_years; ++j) {
            long long v = rng.uniform_int(100, 99999);
            if (!positive_row && rng.uniform() < 0.4) v = -v;
            row_vals.push_back(v);
            int cid = pb.add_line_block({cell_text(v)}, 110 + j * 56, y);
            row_blocks.push_back(cid);
            info.all_blocks.push_back(cid);
        }
        info.values.push_back(std::move(row_vals));
        info.cell_block.push_back(std::move(row_blocks));
        y += kRowPitch;
    }
    pb.next_y = y + 8;
    return info;
}

const char* number_word(int n) {
    switch (n) {
        case 2: return "two";
        case 3: return "three";
        case 4: return "four";
        default: return "several";
    }
}

std::string words_to_string(const std::vector<std::string>& words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) out.push_back(' ');
        out += words[i];
    }
    return out;
}

}  // namespace

void GeneratorConfig::validate() const {
    auto check = [](double sum, const char* what) {
        if (std::abs(sum - 1.0) > 1e-9)
            throw config_error(std::string(what) + " mixture must sum to 1");
    };
    check(std::accumulate(type_mixture.begin(), type_mixture.end(), 0.0), "answer-type");
    check(std::accumulate(scale_mixture.begin(), scale_mixture.end(), 0.0), "scale");
    if (document_count < 1) throw config_error("document_count must be >= 1");
    if (qas_per_doc < 1) throw config_error("qas_per_doc must be >= 1");
}

GeneratedSplit generate_dataset(const GeneratorConfig& cfg) {
    cfg.validate();
    GeneratedSplit out;
    out.dataset.split = cfg.split;
    out.manifest.seed = cfg.seed;
    out.manifest.split = cfg.split;

    int qa_counter = 0;
    for (int d = 0; d < cfg.document_count; ++d) {
        Rng rng(mix_seed(cfg.seed, cfg.split, static_cast<uint64_t>(d)));
        Document doc;
        doc.doc_uid = cfg.split + "-d" + std::to_string(d);
        DocManifest dman;
        dman.uid = doc.doc_uid;

        const int n_pages = rng.uniform() < cfg.two_page_fraction ? 2 : 1;
        std::vector<int> label_pool(kMetricLabels.size());
        std::iota(label_pool.begin(), label_pool.end(), 0);

        std::vector<TableInfo> tables;
        SegmentsInfo segments;
        std::vector<ReasonInfo> reasons;

        const std::string company = rng.pick(kCompanies);

        for (int pi = 0; pi < n_pages; ++pi) {
            PageBuilder pb(pi);
            pb.add_paragraph({company, "Holdings", "Annual", "Report"});

            bool with_table = (pi == 0) || rng.uniform() < 0.3;
            if (with_table) {
                Scale sc = static_cast<Scale>(
                    rng.pick_weighted(cfg.scale_mixture.data(), 5));
                tables.push_back(build_table(pb, rng, sc, label_pool));
            }

            if (pi == 0) {
                // caption provides the year-count token for average questions
                const TableInfo& t = tables.front();
                pb.add_paragraph({"The", "table", "above", "reports", "figures",
                                  "for", std::to_string(t.years.size()), "fiscal",
                                  "years", "."});

                // segment enumeration
                int n_seg = rng.uniform_int(2, 4);
                std::vector<int> seg_pool(kSegmentPool.size());
                std::iota(seg_pool.begin(), seg_pool.end(), 0);
                segments.page_index = pi;
                std::vector<std::string> sent = {"The", "Company", "operates",
                                                 number_word(n_seg), "reportable",
                                                 "segments", ":"};
                for (int s = 0; s < n_seg; ++s) {
                    int pos = rng.uniform_int(0, static_cast<int>(seg_pool.size()) - 1);
                    std::string name = kSegmentPool[static_cast<size_t>(seg_pool[pos])];
                    seg_pool.erase(seg_pool.begin() + pos);
                    if (s > 0) sent.push_back(s + 1 == n_seg ? "and" : ",");
                    segments.name_spans.emplace_back(static_cast<int>(sent.size()),
                                                     static_cast<int>(sent.size()) + 1);
                    segments.names.push_back(name);
                    sent.push_back(name);
                }
                sent.push_back(".");
                segments.block_id = pb.add_paragraph(sent);
            }

            // one or two reason sentences tied to table rows of this page
            if (!tables.empty()) {
                const TableInfo& t = tables.front();
                int n_reasons = pi == 0 ? rng.uniform_int(1, 2) : 0;
                for (int k = 0; k < n_reasons && k < static_cast<int>(t.labels.size()); ++k) {
                    ReasonInfo ri;
                    ri.page_index = pi;
                    ri.label = t.labels[static_cast<size_t>(k)];
                    ri.year = t.years.back();
                    ri.phrase = rng.pick(kReasonPhrases);
                    std::vector<std::string> sent = ri.label;
                    sent.push_back("increased");
                    sent.push_back("in");
                    sent.push_back(std::to_string(ri.year));
                    sent.push_back("mainly");
                    sent.push_back("due");
                    sent.push_back("to");
                    ri.phrase_begin = static_cast<int>(sent.size());
                    sent.insert(sent.end(), ri.phrase.begin(), ri.phrase.end());
                    ri.phrase_end = static_cast<int>(sent.size());
                    sent.push_back(".");
                    ri.block_id = pb.add_paragraph(sent);
                    reasons.push_back(ri);
                }
            }

            // filler to approach the word target
            while (pb.word_count() < cfg.words_per_page && !pb.full())
                pb.add_paragraph(rng.pick(kFillerSentences));

            if (cfg.render_images)
                pb.page.image_ref = "images/" + doc.doc_uid + "-p" +
                                    std::to_string(pi) + ".pgm";
            doc.pages.push_back(std::move(pb.page));
        }

        for (const TableInfo& t : tables) {
            PageManifest pm;
            pm.page_index = t.page_index;
            pm.table_blocks = t.all_blocks;
            std::sort(pm.table_blocks.begin(), pm.table_blocks.end());
            dman.pages.push_back(std::move(pm));
        }
        for (int pi = 0; pi < n_pages; ++pi) {
            bool seen = false;
            for (const PageManifest& pm : dman.pages) seen = seen || pm.page_index == pi;
            if (!seen) dman.pages.push_back(PageManifest{pi, {}});
        }
        std::sort(dman.pages.begin(), dman.pages.end(),
                  [](const PageManifest& a, const PageManifest& b) {
                      return a.page_index < b.page_index;
                  });

        // question-answer pairs
        for (int q = 0; q < cfg.qas_per_doc; ++q) {
            QAPair qa;
            qa.qa_uid = cfg.split + "-q" + std::to_string(qa_counter++);
            qa.doc_uid = doc.doc_uid;
            QAManifest qman;
            qman.uid = qa.qa_uid;

            AnswerType type =
                static_cast<AnswerType>(rng.pick_weighted(cfg.type_mixture.data(), 4));
            const TableInfo& t = tables[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int>(tables.size()) - 1))];

            switch (type) {
                case AnswerType::Span: {
                    if (!reasons.empty() && rng.uniform() < 0.3) {
                        const ReasonInfo& ri = rng.pick(reasons);
                        qa.question = "Why did " + words_to_string(ri.label) +
                                      " increase in " + std::to_string(ri.year) + " ?";
                        qa.gold_answer =
                            std::vector<std::string>{words_to_string(ri.phrase)};
                        qa.scale = Scale::None;
                        qa.evidence.push_back(
                            {ri.page_index, ri.block_id, ri.phrase_begin, ri.phrase_end});
                        qman.template_id = "span-phrase";
                    } else {
                        int r = rng.uniform_int(0, static_cast<int>(t.labels.size()) - 1);
                        int j = rng.uniform_int(0, static_cast<int>(t.years.size()) - 1);
                        qa.question = "What was the " +
                                      words_to_string(t.labels[static_cast<size_t>(r)]) +
                                      " in " + std::to_string(t.years[static_cast<size_t>(j)]) +
                                      " ?";
                        qa.gold_answer = std::vector<std::string>{
                            cell_text(t.values[static_cast<size_t>(r)][static_cast<size_t>(j)])};
                        qa.scale = t.scale;
                        qa.evidence.push_back(
                            {t.page_index, t.cell_block[static_cast<size_t>(r)][static_cast<size_t>(j)], 0, 1});
                        qman.template_id = "span-cell";
                        qman.sampled_values.push_back(
                            static_cast<double>(t.values[static_cast<size_t>(r)][static_cast<size_t>(j)]));
                    }
                    qa.answer_type = AnswerType::Span;
                    break;
                }
                case AnswerType::Spans: {
                    qa.question = "What are the reportable segments of the Company ?";
                    qa.gold_answer = segments.names;
                    qa.answer_type = AnswerType::Spans;
                    qa.scale = Scale::None;
                    for (const auto& [b, e] : segments.name_spans)
                        qa.evidence.push_back({segments.page_index, segments.block_id, b, e});
                    qman.template_id = "multi-span-segments";
                    break;
                }
                case AnswerType::Counting: {
                    qa.question = "How many reportable segments does the Company operate ?";
                    qa.gold_answer = static_cast<double>(segments.names.size());
                    qa.answer_type = AnswerType::Counting;
                    qa.scale = Scale::None;
                    for (const auto& [b, e] : segments.name_spans)
                        qa.evidence.push_back({segments.page_index, segments.block_id, b, e});
                    qman.template_id = "count-segments";
                    break;
                }
                case AnswerType::Arithmetic: {
                    static const double kSubtypeW[4] = {0.30, 0.30, 0.25, 0.15};
                    int subtype = rng.pick_weighted(kSubtypeW, 4);
                    // percent change needs a strictly positive row
                    std::vector<int> pos_rows;
                    for (size_t r = 0; r < t.row_positive.size(); ++r) {
                        bool ok = true;
                        for (long long v : t.values[r]) ok = ok && v > 0;
                        if (ok) pos_rows.push_back(static_cast<int>(r));
                    }
                    if (subtype == 2 && pos_rows.empty()) subtype = 1;

                    const int n_years = static_cast<int>(t.years.size());
                    int j1 = 0, j2 = 1;
                    if (n_years > 2) {
                        j1 = rng.uniform_int(0, n_years - 2);
                        j2 = rng.uniform_int(j1 + 1, n_years - 1);
                    }
                    std::string deriv;
                    int row;
                    if (subtype == 2)
                        row = pos_rows[static_cast<size_t>(
                            rng.uniform_int(0, static_cast<int>(pos_rows.size()) - 1))];
                    else
                        row = rng.uniform_int(0, static_cast<int>(t.labels.size()) - 1);
                    const std::string label = words_to_string(t.labels[static_cast<size_t>(row)]);
                    const long long a = t.values[static_cast<size_t>(row)][static_cast<size_t>(j1)];
                    const long long b = t.values[static_cast<size_t>(row)][static_cast<size_t>(j2)];
                    const int y1 = t.years[static_cast<size_t>(j1)];
                    const int y2 = t.years[static_cast<size_t>(j2)];
                    switch (subtype) {
                        case 0:
                            qa.question = "What was the total " + label + " in " +
                                          std::to_string(y1) + " and " +
                                          std::to_string(y2) + " ?";
                            deriv = operand_text(a) + " + " + operand_text(b);
                            qa.scale = t.scale;
                            qman.template_id = "arith-sum";
                            break;
                        case 1:
                            qa.question = "What was the change in " + label +
                                          " between " + std::to_string(y1) + " and " +
                                          std::to_string(y2) + " ?";
                            deriv = operand_text(b) + " - " + operand_text(a);
                            qa.scale = t.scale;
                            qman.template_id = "arith-change";
                            break;
                        case 2:
                            qa.question = "What was the percentage change in " + label +
                                          " between " + std::to_string(y1) + " and " +
                                          std::to_string(y2) + " ?";
                            deriv = "((" + operand_text(b) + " - " + operand_text(a) +
                                    ") / " + operand_text(a) + ") * 100";
                            qa.scale = Scale::Percent;
                            qman.template_id = "arith-pct";
                            break;
                        default: {
                            qa.question = "What was the average " + label + " from " +
                                          std::to_string(t.years.front()) + " to " +
                                          std::to_string(t.years.back()) + " ?";
                            std::string sum;
                            for (int j = 0; j < n_years; ++j) {
                                if (j) sum += " + ";
                                sum += operand_text(
                                    t.values[static_cast<size_t>(row)][static_cast<size_t>(j)]);
                            }
                            deriv = "(" + sum + ") / " + std::to_string(n_years);
                            qa.scale = t.scale;
                            qman.template_id = "arith-avg";
                            break;
                        }
                    }
                    qa.derivation = deriv;
                    qa.gold_answer = execute(parse_derivation(deriv));
                    qa.answer_type = AnswerType::Arithmetic;
                    if (subtype == 3) {
                        for (int j = 0; j < n_years; ++j) {
                            qa.evidence.push_back(
                                {t.page_index,
                                 t.cell_block[static_cast<size_t>(row)][static_cast<size_t>(j)], 0, 1});
                            qman.sampled_values.push_back(static_cast<double>(
                                t.values[static_cast<size_t>(row)][static_cast<size_t>(j)]));
                        }
                    } else {
                        qa.evidence.push_back(
                            {t.page_index, t.cell_block[static_cast<size_t>(row)][static_cast<size_t>(j1)], 0, 1});
                        qa.evidence.push_back(
                            {t.page_index, t.cell_block[static_cast<size_t>(row)][static_cast<size_t>(j2)], 0, 1});
                        qman.sampled_values.push_back(static_cast<double>(a));
                        qman.sampled_values.push_back(static_cast<double>(b));
                    }
                    break;
                }
            }
            qman.template_id = qman.template_id.empty() ? "?" : qman.template_id;
            ++out.manifest.type_counts[to_string(qa.answer_type)];
            dman.qas.push_back(std::move(qman));
            out.dataset.qa_pairs.push_back(std::move(qa));
        }

        out.dataset.doc_index[doc.doc_uid] = out.dataset.documents.size();
        out.dataset.documents.push_back(std::move(doc));
        out.manifest.documents.push_back(std::move(dman));
    }
    out.manifest.document_count = static_cast<int>(out.dataset.documents.size());
    out.manifest.qa_count = static_cast<int>(out.dataset.qa_pairs.size());
    return out;
}

Image render_page(const Page& page) {
    Image img;
    img.width = page.width;
    img.height = page.height;
    img.channels = 1;
    img.pixels.assign(static_cast<size_t>(img.width) * img.height, 255);
    for (const TextBlock& b : page.blocks) {
        for (const Word& w : b.words) {
            int x0 = w.bbox.x0 * img.width / 1000;
            int x1 = w.bbox.x1 * img.width / 1000;
            int y0 = w.bbox.y0 * img.height / 1000;
            int y1 = w.bbox.y1 * img.height / 1000;
            for (int y = y0; y < y1 && y < img.height; ++y)
                for (int x = x0; x < x1 && x < img.width; ++x)
                    img.pixels[static_cast<size_t>(y) * img.width + x] = 40;
        }
    }
    return img;
}

std::string Manifest::to_json() const {
    json j;
    j["seed"] = seed;
    j["split"] = split;
    j["document_count"] = document_count;
    j["qa_count"] = qa_count;
    j["type_counts"] = type_counts;
    json docs = json::array();
    for (const DocManifest& d : documents) {
        json jd;
        jd["uid"] = d.uid;
        json pages = json::array();
        for (const PageManifest& p : d.pages) {
            json jp;
            jp["index"] = p.page_index;
            jp["table_blocks"] = p.table_blocks;
            pages.push_back(std::move(jp));
        }
        jd["pages"] = std::move(pages);
        json qas = json::array();
        for (const QAManifest& q : d.qas) {
            json jq;
            jq["uid"] = q.uid;
            jq["template"] = q.template_id;
            jq["values"] = q.sampled_values;
            qas.push_back(std::move(jq));
        }
        jd["qas"] = std::move(qas);
        docs.push_back(std::move(jd));
    }
    j["documents"] = std::move(docs);
    return j.dump(1);
}

Manifest Manifest::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open manifest: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw malformed_input(path + ": invalid JSON: " + e.what());
    }
    Manifest m;
    m.seed = j.at("seed").get<uint64_t>();
    m.split = j.at("split").get<std::string>();
    m.document_count = j.at("document_count").get<int>();
    m.qa_count = j.at("qa_count").get<int>();
    m.type_counts = j.at("type_counts").get<std::map<std::string, int>>();
    for (const json& jd : j.at("documents")) {
        DocManifest d;
        d.uid = jd.at("uid").get<std::string>();
        for (const json& jp : jd.at("pages")) {
            PageManifest p;
            p.page_index = jp.at("index").get<int>();
            p.table_blocks = jp.at("table_blocks").get<std::vector<int>>();
            d.pages.push_back(std::move(p));
        }
        for (const json& jq : jd.at("qas")) {
            QAManifest q;
            q.uid = jq.at("uid").get<std::string>();
            q.template_id = jq.at("template").get<std::string>();
            q.sampled_values = jq.at("values").get<std::vector<double>>();
            d.qas.push_back(std::move(q));
        }
        m.documents.push_back(std::move(d));
    }
    return m;
}

void write_split(const GeneratedSplit& split, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    save_dataset(split.dataset, out_dir + "/" + split.dataset.split + ".json");
    {
        std::ofstream out(out_dir + "/" + split.dataset.split + ".manifest.json");
        if (!out) throw error("cannot write manifest under " + out_dir);
        out << split.manifest.to_json() << "\n";
    }
    bool any_images = false;
    for (const Document& d : split.dataset.documents)
        for (const Page& p : d.pages) any_images = any_images || p.image_ref.has_value();
    if (any_images) fs::create_directories(out_dir + "/images");
    for (const Document& d : split.dataset.documents)
        for (const Page& p : d.pages)
            if (p.image_ref) save_pgm(render_page(p), out_dir + "/" + *p.image_ref);
}

}  // namespace dqa
