#include "dqa/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace dqa {

namespace {

std::string lowercase(const std::string& s) {
    std::string out = s;
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::vector<std::string> split_whitespace(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream iss(s);
    std::string w;
    while (iss >> w) out.push_back(w);
    return out;
}

}  // namespace

std::optional<double> parse_number(const std::string& text) {
    std::string s = text;
    // trim
    size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return std::nullopt;
    size_t e = s.find_last_not_of(" \t");
    s = s.substr(b, e - b + 1);

    bool negative = false;
    if (s.size() >= 2 && s.front() == '(' && s.back() == ')') {
        negative = true;
        s = s.substr(1, s.size() - 2);
    }
    if (!s.empty() && s.front() == '$') s.erase(s.begin());
    if (!s.empty() && s.back() == '%') s.pop_back();
    // strip thousands separators
    std::string t;
    t.reserve(s.size());
    for (char c : s)
        if (c != ',') t.push_back(c);
    if (t.empty()) return std::nullopt;

    size_t i = 0;
    if (t[i] == '+' || t[i] == '-') ++i;
    int digits = 0, dots = 0;
    for (size_t j = i; j < t.size(); ++j) {
        if (std::isdigit(static_cast<unsigned char>(t[j]))) {
            ++digits;
        } else if (t[j] == '.') {
            ++dots;
        } else {
            return std::nullopt;
        }
    }
    if (digits == 0 || dots > 1) return std::nullopt;
    double v = std::strtod(t.c_str(), nullptr);
    if (negative) v = -std::abs(v);
    return v;
}

std::vector<std::string> tfidf_tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

int Vocab::id_of(const std::string& raw) const {
    auto it = index.find(lowercase(raw));
    if (it != index.end()) return it->second;
    if (parse_number(raw).has_value()) return SpecialIds::kNum;
    return SpecialIds::kUnk;
}

Vocab Vocab::build(const Dataset& ds, int min_freq) {
    std::map<std::string, int> freq;
    for (const Document& d : ds.documents)
        for (const Page& p : d.pages)
            for (const TextBlock& b : p.blocks)
                for (const Word& w : b.words) ++freq[lowercase(w.text)];
    for (const QAPair& qa : ds.qa_pairs)
        for (const std::string& w : split_whitespace(qa.question)) ++freq[lowercase(w)];

    Vocab v;
    for (const auto& [word, n] : freq)
        if (n >= min_freq) v.words.push_back(word);  // map order = sorted
    for (size_t i = 0; i < v.words.size(); ++i)
        v.index[v.words[i]] = SpecialIds::kFirstWordId + static_cast<int>(i);
    return v;
}

std::vector<int> InputSequence::document_token_indices() const {
    std::vector<int> out;
    out.reserve(table_range.size() + text_range.size());
    for (int i = table_range.begin; i < table_range.end; ++i) out.push_back(i);
    for (int i = text_range.begin; i < text_range.end; ++i) out.push_back(i);
    return out;
}

namespace {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

double interval_overlap(int a0, int a1, int b0, int b1) {
    return std::max(0, std::min(a1, b1) - std::max(a0, b0));
}

bool is_numeric_block(const TextBlock& b) {
    std::string joined;
    for (size_t i = 0; i < b.words.size(); ++i) {
        if (i) joined.push_back(' ');
        joined += b.words[i].text;
    }
    return parse_number(joined).has_value();
}

}  // namespace

std::set<int> detect_table_blocks(const Page& page, const TableHeuristicConfig& cfg) {
    const int n = static_cast<int>(page.blocks.size());
    std::set<int> flagged;
    if (n == 0) return flagged;

    // 1) rows by vertical-interval overlap
    UnionFind rows(n);
    for (int i = 0; i < n; ++i) {
        const BoundingBox& a = page.blocks[i].bbox;
        for (int j = i + 1; j < n; ++j) {
            const BoundingBox& b = page.blocks[j].bbox;
            double ov = interval_overlap(a.y0, a.y1, b.y0, b.y1);
            double smaller = std::min(a.height(), b.height());
            if (ov > 0.0 && ov >= cfg.row_overlap * smaller) rows.unite(i, j);
        }
    }
    std::map<int, std::vector<int>> row_groups;
    for (int i = 0; i < n; ++i) row_groups[rows.find(i)].push_back(i);

    // 2) candidate rows (>= 2 blocks) linked into components by horizontal
    //    alignment of at least one block pair
    std::vector<std::vector<int>> candidates;
    for (auto& [root, members] : row_groups)
        if (members.size() >= 2) candidates.push_back(members);
    if (candidates.empty()) return flagged;

    auto col_aligned = [&](int i, int j) {
        const BoundingBox& a = page.blocks[i].bbox;
        const BoundingBox& b = page.blocks[j].bbox;
        double ov = interval_overlap(a.x0, a.x1, b.x0, b.x1);
        double smaller = std::min(a.width(), b.width());
        return ov > 0.0 && ov >= cfg.col_overlap * smaller;
    };

    const int m = static_cast<int>(candidates.size());
    UnionFind comp(m);
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) {
            bool linked = false;
            for (int a : candidates[i]) {
                for (int b : candidates[j])
                    if (col_aligned(a, b)) {
                        linked = true;
                        break;
                    }
                if (linked) break;
            }
            if (linked) comp.unite(i, j);
        }

    std::map<int, std::vector<int>> groups;  // component -> row list
    for (int i = 0; i < m; ++i) groups[comp.find(i)].push_back(i);

    // 3) gate each component on rows, columns, numeric density
    for (auto& [root, row_list] : groups) {
        if (static_cast<int>(row_list.size()) < cfg.min_rows) continue;
        std::vector<int> blocks;
        for (int r : row_list)
            for (int b : candidates[r]) blocks.push_back(b);
        const int nb = static_cast<int>(blocks.size());
        UnionFind cols(nb);
        for (int i = 0; i < nb; ++i)
            for (int j = i + 1; j < nb; ++j)
                if (col_aligned(blocks[i], blocks[j])) cols.unite(i, j);
        std::set<int> col_roots;
        for (int i = 0; i < nb; ++i) col_roots.insert(cols.find(i));
        if (static_cast<int>(col_roots.size()) < cfg.min_cols) continue;
        int numeric = 0;
        for (int b : blocks)
            if (is_numeric_block(page.blocks[b])) ++numeric;
        if (numeric < cfg.numeric_density * nb) continue;
        for (int b : blocks) flagged.insert(page.blocks[b].block_id);
    }
    return flagged;
}

void flag_tables(Document& doc, const TableHeuristicConfig& cfg) {
    for (Page& page : doc.pages) {
        std::set<int> ids = detect_table_blocks(page, cfg);
        for (TextBlock& b : page.blocks) b.is_table = ids.count(b.block_id) > 0;
    }
}

std::vector<int> rank_text_blocks(const std::string& question,
                                  const std::vector<const TextBlock*>& blocks) {
    const int n = static_cast<int>(blocks.size());
    std::vector<std::map<std::string, int>> tf(n);
    std::map<std::string, int> df;
    for (int i = 0; i < n; ++i) {
        std::string joined;
        for (const Word& w : blocks[i]->words) {
            joined += w.text;
            joined.push_back(' ');
        }
        for (const std::string& t : tfidf_tokenize(joined)) ++tf[i][t];
        for (const auto& [t, c] : tf[i]) ++df[t];
    }
    auto idf = [&](const std::string& t) {
        auto it = df.find(t);
        int d = it == df.end() ? 0 : it->second;
        return std::log((1.0 + n) / (1.0 + d)) + 1.0;
    };

    std::map<std::string, int> qtf;
    for (const std::string& t : tfidf_tokenize(question)) ++qtf[t];
    double qnorm = 0.0;
    for (const auto& [t, c] : qtf) {
        double w = c * idf(t);
        qnorm += w * w;
    }
    qnorm = std::sqrt(qnorm);

    std::vector<double> sim(n, 0.0);
    for (int i = 0; i < n; ++i) {
        double dot = 0.0, bnorm = 0.0;
        for (const auto& [t, c] : tf[i]) {
            double w = c * idf(t);
            bnorm += w * w;
            auto it = qtf.find(t);
            if (it != qtf.end()) dot += w * it->second * idf(t);
        }
        bnorm = std::sqrt(bnorm);
        sim[i] = (qnorm > 0.0 && bnorm > 0.0) ? dot / (qnorm * bnorm) : 0.0;
    }

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return sim[a] > sim[b]; });
    return order;
}

int select_major_table_page(const Document& doc) {
    int best_page = doc.pages.empty() ? 0 : doc.pages.front().page_index;
    int best_count = -1;
    for (const Page& p : doc.pages) {
        int count = 0;
        for (const TextBlock& b : p.blocks)
            if (b.is_table) ++count;
        if (count > best_count || (count == best_count && p.page_index < best_page)) {
            best_count = count;
            best_page = p.page_index;
        }
    }
    if (best_count <= 0) return doc.pages.empty() ? 0 : doc.pages.front().page_index;
    return best_page;
}

Image load_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw image_decode_error("cannot open image: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5" && magic != "P6")
        throw image_decode_error(path + ": unsupported format \"" + magic + "\"");
    auto next_int = [&]() {
        // skip whitespace and '#' comments
        while (true) {
            int c = in.peek();
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        int v = -1;
        in >> v;
        return v;
    };
    Image img;
    img.width = next_int();
    img.height = next_int();
    int maxval = next_int();
    if (img.width <= 0 || img.height <= 0 || maxval <= 0 || maxval > 255)
        throw image_decode_error(path + ": bad header");
    in.get();  // single whitespace after maxval
    img.channels = (magic == "P6") ? 3 : 1;
    img.pixels.resize(static_cast<size_t>(img.width) * img.height * img.channels);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw image_decode_error(path + ": truncated pixel data");
    return img;
}

void save_pgm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot write image: " + path);
    if (img.channels != 1) throw error("save_pgm expects a grayscale image");
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
}

std::vector<PatchFeature> zero_patches(int grid) {
    std::vector<PatchFeature> out;
    out.reserve(static_cast<size_t>(grid) * grid);
    for (int gy = 0; gy < grid; ++gy)
        for (int gx = 0; gx < grid; ++gx) {
            PatchFeature f;
            f.bbox = BoundingBox{gx * 1000 / grid, gy * 1000 / grid,
                                 (gx + 1) * 1000 / grid, (gy + 1) * 1000 / grid};
            out.push_back(f);
        }
    return out;
}

std::vector<PatchFeature> page_to_patches(const Image& img, int grid) {
    constexpr int kSide = 224;
    // nearest-neighbor resample to 224x224, 3 channels
    std::vector<double> resized(static_cast<size_t>(kSide) * kSide * 3);
    for (int y = 0; y < kSide; ++y) {
        int sy = static_cast<int>(static_cast<int64_t>(y) * img.height / kSide);
        for (int x = 0; x < kSide; ++x) {
            int sx = static_cast<int>(static_cast<int64_t>(x) * img.width / kSide);
            for (int c = 0; c < 3; ++c) {
                int sc = img.channels == 3 ? c : 0;
                resized[(static_cast<size_t>(y) * kSide + x) * 3 + c] =
                    img.at(sx, sy, sc) / 255.0;
            }
        }
    }
    std::vector<PatchFeature> out = zero_patches(grid);
    for (int gy = 0; gy < grid; ++gy) {
        int y0 = gy * kSide / grid, y1 = (gy + 1) * kSide / grid;
        for (int gx = 0; gx < grid; ++gx) {
            int x0 = gx * kSide / grid, x1 = (gx + 1) * kSide / grid;
            double sr = 0.0, sg = 0.0, sb = 0.0;
            int count = 0;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    size_t base = (static_cast<size_t>(y) * kSide + x) * 3;
                    sr += resized[base];
                    sg += resized[base + 1];
                    sb += resized[base + 2];
                    ++count;
                }
            PatchFeature& f = out[static_cast<size_t>(gy) * grid + gx];
            if (count > 0) {
                f.mean_r = sr / count;
                f.mean_g = sg / count;
                f.mean_b = sb / count;
                f.darkness = 1.0 - (f.mean_r + f.mean_g + f.mean_b) / 3.0;
            }
        }
    }
    return out;
}

namespace {

BoundingBox zero_box() { return BoundingBox{0, 0, 0, 0}; }

Token marker_token(int symbol, Segment seg) {
    Token t;
    t.symbol = symbol;
    t.bbox = zero_box();
    t.segment = seg;
    t.source = TokenSource{-1, -1, -1};
    return t;
}

}  // namespace

InputSequence assemble_input(const std::string& question, const Document& doc,
                             const Vocab& vocab, const PreprocessConfig& cfg) {
    Document flagged = doc;
    bool any_flag = false;
    for (const Page& p : doc.pages)
        for (const TextBlock& b : p.blocks) any_flag = any_flag || b.is_table;
    if (!any_flag) flag_tables(flagged, cfg.table);

    const std::vector<std::string> qwords = split_whitespace(question);
    const int n_patches = cfg.patch_grid * cfg.patch_grid;
    const int mandatory = 1 + static_cast<int>(qwords.size()) + 3 + n_patches;
    if (mandatory > cfg.token_budget)
        throw budget_too_small("question, markers and patch tokens need " +
                               std::to_string(mandatory) + " tokens, budget is " +
                               std::to_string(cfg.token_budget));
    int doc_capacity = cfg.token_budget - mandatory;

    InputSequence seq;
    seq.cls_index = 0;
    seq.tokens.push_back(marker_token(SpecialIds::kCls, Segment::Question));
    seq.question_range.begin = 1;
    for (size_t i = 0; i < qwords.size(); ++i) {
        Token t;
        t.symbol = vocab.id_of(qwords[i]);
        t.bbox = zero_box();
        t.segment = Segment::Question;
        t.source = TokenSource{-1, -1, static_cast<int>(i)};
        seq.tokens.push_back(t);
    }
    seq.question_range.end = static_cast<int>(seq.tokens.size());
    seq.tokens.push_back(marker_token(SpecialIds::kSep, Segment::Question));

    // table tokens, reading order, cut at capacity
    seq.table_range.begin = static_cast<int>(seq.tokens.size());
    for (const Page& p : flagged.pages) {
        for (const TextBlock& b : p.blocks) {
            if (!b.is_table) continue;
            for (size_t wi = 0; wi < b.words.size(); ++wi) {
                if (doc_capacity == 0) break;
                Token t;
                t.symbol = vocab.id_of(b.words[wi].text);
                t.bbox = b.words[wi].bbox;
                t.segment = Segment::Table;
                t.source = TokenSource{p.page_index, b.block_id, static_cast<int>(wi)};
                seq.tokens.push_back(t);
                --doc_capacity;
            }
        }
    }
    seq.table_range.end = static_cast<int>(seq.tokens.size());
    seq.tokens.push_back(marker_token(SpecialIds::kSep, Segment::Table));

    // ranked non-table blocks, whole blocks until one no longer fits
    std::vector<const TextBlock*> text_blocks;
    std::vector<const Page*> text_pages;
    for (const Page& p : flagged.pages)
        for (const TextBlock& b : p.blocks)
            if (!b.is_table) {
                text_blocks.push_back(&b);
                text_pages.push_back(&p);
            }
    std::vector<int> ranked = rank_text_blocks(question, text_blocks);

    seq.text_range.begin = static_cast<int>(seq.tokens.size());
    for (int pos : ranked) {
        const TextBlock& b = *text_blocks[pos];
        if (static_cast<int>(b.words.size()) > doc_capacity) break;
        for (size_t wi = 0; wi < b.words.size(); ++wi) {
            Token t;
            t.symbol = vocab.id_of(b.words[wi].text);
            t.bbox = b.words[wi].bbox;
            t.segment = Segment::Text;
            t.source = TokenSource{text_pages[pos]->page_index, b.block_id,
                                   static_cast<int>(wi)};
            seq.tokens.push_back(t);
        }
        doc_capacity -= static_cast<int>(b.words.size());
    }
    seq.text_range.end = static_cast<int>(seq.tokens.size());
    seq.tokens.push_back(marker_token(SpecialIds::kSep, Segment::Text));

    // visual patches from the page holding the major table
    int major = select_major_table_page(flagged);
    const Page* vis_page = nullptr;
    for (const Page& p : flagged.pages)
        if (p.page_index == major) vis_page = &p;
    if (vis_page && vis_page->image_ref) {
        std::string path = *vis_page->image_ref;
        if (!cfg.image_base_dir.empty() && !path.empty() && path.front() != '/')
            path = cfg.image_base_dir + "/" + path;
        seq.patches = page_to_patches(load_pnm(path), cfg.patch_grid);
    } else {
        seq.patches = zero_patches(cfg.patch_grid);
    }
    seq.visual_range.begin = static_cast<int>(seq.tokens.size());
    for (int pi = 0; pi < n_patches; ++pi) {
        Token t;
        t.symbol = SpecialIds::kVis;
        t.bbox = seq.patches[pi].bbox;
        t.segment = Segment::Visual;
        t.source = TokenSource{vis_page ? vis_page->page_index : -1, pi, -1};
        seq.tokens.push_back(t);
    }
    seq.visual_range.end = static_cast<int>(seq.tokens.size());

    // number candidates over document tokens
    auto scan_numbers = [&](IndexRange r) {
        for (int i = r.begin; i < r.end; ++i) {
            const TokenSource& src = seq.tokens[i].source;
            const Page* page = nullptr;
            for (const Page& p : flagged.pages)
                if (p.page_index == src.page_index) page = &p;
            const Word& w = page->blocks[src.block_id].words[src.word_index];
            if (auto v = parse_number(w.text)) seq.number_candidates.push_back({i, *v});
        }
    };
    scan_numbers(seq.table_range);
    scan_numbers(seq.text_range);
    return seq;
}

}  // namespace dqa
