#include "subkit/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "subkit/rng.hpp"

namespace subkit {

namespace {

// Decodes one UTF-8 code point starting at s[i]; advances i past it.
// Invalid bytes decode as U+FFFD and consume a single byte.
char32_t decode_utf8(std::string_view s, std::size_t& i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    int extra = 0;
    char32_t cp = 0;
    if ((b0 & 0xe0) == 0xc0) {
        extra = 1;
        cp = b0 & 0x1f;
    } else if ((b0 & 0xf0) == 0xe0) {
        extra = 2;
        cp = b0 & 0x0f;
    } else if ((b0 & 0xf8) == 0xf0) {
        extra = 3;
        cp = b0 & 0x07;
    } else {
        ++i;
        return 0xfffd;
    }
    if (i + static_cast<std::size_t>(extra) >= s.size()) {
        // truncated sequence
        ++i;
        return 0xfffd;
    }
    for (int k = 1; k <= extra; ++k) {
        const auto b = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
        if ((b & 0xc0) != 0x80) {
            ++i;
            return 0xfffd;
        }
        cp = (cp << 6) | (b & 0x3f);
    }
    i += static_cast<std::size_t>(extra) + 1;
    return cp;
}

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xc0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3f));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xe0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
        out += static_cast<char>(0x80 | (cp & 0x3f));
    } else {
        out += static_cast<char>(0xf0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3f));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
        out += static_cast<char>(0x80 | (cp & 0x3f));
    }
}

bool in_range(char32_t cp, char32_t lo, char32_t hi) { return cp >= lo && cp <= hi; }

// Committed letter/digit classification. ASCII handled exactly; beyond that,
// coverage is by code-point ranges for the scripts the task cares about
// (Latin incl. accents, Greek, Cyrillic, Hebrew, Arabic, kana, CJK, Hangul,
// plus full/half-width forms). Everything else counts as "special".
bool is_word_char(char32_t cp) {
    if (cp < 0x80)
        return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') || (cp >= '0' && cp <= '9');
    if (cp == 0x00d7 || cp == 0x00f7) return false;  // multiplication/division signs
    if (in_range(cp, 0x00c0, 0x024f)) return true;   // Latin-1 letters, Latin Extended A/B
    if (in_range(cp, 0x0370, 0x03ff)) return true;   // Greek
    if (in_range(cp, 0x0400, 0x04ff)) return true;   // Cyrillic
    if (in_range(cp, 0x05d0, 0x05ea)) return true;   // Hebrew letters
    if (in_range(cp, 0x0620, 0x064a)) return true;   // Arabic letters
    if (in_range(cp, 0x0660, 0x0669)) return true;   // Arabic-Indic digits
    if (in_range(cp, 0x0900, 0x097f)) return true;   // Devanagari
    if (in_range(cp, 0x0e00, 0x0e5b)) return true;   // Thai
    if (in_range(cp, 0x3041, 0x3096)) return true;   // Hiragana
    if (in_range(cp, 0x3099, 0x309f)) return true;   // kana marks
    if (in_range(cp, 0x30a0, 0x30ff) && cp != 0x30fb) return true;  // Katakana minus middle dot
    if (in_range(cp, 0x31f0, 0x31ff)) return true;   // Katakana phonetic extensions
    if (in_range(cp, 0x3400, 0x4dbf)) return true;   // CJK extension A
    if (in_range(cp, 0x4e00, 0x9fff)) return true;   // CJK unified ideographs
    if (in_range(cp, 0xac00, 0xd7af)) return true;   // Hangul syllables
    if (in_range(cp, 0xff10, 0xff19)) return true;   // fullwidth digits
    if (in_range(cp, 0xff21, 0xff3a)) return true;   // fullwidth Latin upper
    if (in_range(cp, 0xff41, 0xff5a)) return true;   // fullwidth Latin lower
    if (in_range(cp, 0xff66, 0xff9f)) return true;   // halfwidth katakana
    return false;
}

}  // namespace

std::string clean_title(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    bool any = false;
    std::size_t i = 0;
    while (i < raw.size()) {
        const char32_t cp = decode_utf8(raw, i);
        const bool keep = is_word_char(cp);
        if (keep) {
            if (pending_space && any) out += ' ';
            append_utf8(out, cp);
            any = true;
            pending_space = false;
        } else {
            pending_space = true;  // spaces and specials both separate
        }
    }
    return out;
}

std::vector<std::string> clean_tokens(std::string_view text) {
    const std::string cleaned = clean_title(text);
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : cleaned) {
        if (c == ' ') {
            if (!cur.empty()) tokens.push_back(std::move(cur)), cur.clear();
        } else {
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
            cur += c;
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

Vocabulary::Vocabulary() {
    tokens_ = {"<pad>", "<unk>", "<sep>"};
    ids_ = {{tokens_[0], kPad}, {tokens_[1], kUnk}, {tokens_[2], kSep}};
}

int Vocabulary::add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    ids_.emplace(token, id);
    return id;
}

int Vocabulary::id_of(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token_of(int id) const {
    if (id < 0 || id >= size()) throw DataError("vocabulary: id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tokens_) {
        h = fnv1a64(t, h);
        h = fnv1a64("\n", h);
    }
    return h;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file: " + path);
    out << "subkit-vocab v1\n";
    for (std::size_t i = 3; i < tokens_.size(); ++i) out << tokens_[i] << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary file: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "subkit-vocab v1")
        throw DataError("bad vocabulary header in " + path);
    Vocabulary v;
    while (std::getline(in, line))
        if (!line.empty()) v.add(line);
    return v;
}

Vocabulary build_vocab(const std::vector<Example>& examples, int min_count) {
    if (min_count < 1) throw DataError("build_vocab: min_count must be >= 1");
    if (examples.empty()) throw DataError("empty corpus");
    // first pass: counts; second: ids in first-seen order for qualifying tokens
    std::unordered_map<std::string, std::int64_t> counts;
    std::vector<std::string> order;
    auto see = [&](const std::string& tok) {
        auto [it, fresh] = counts.emplace(tok, 0);
        it->second++;
        if (fresh) order.push_back(tok);
    };
    for (const auto& ex : examples) {
        for (auto& t : clean_tokens(ex.query)) see(t);
        for (auto& t : clean_tokens(ex.title)) see(t);
    }
    Vocabulary vocab;
    for (const auto& tok : order)
        if (counts[tok] >= min_count) vocab.add(tok);
    return vocab;
}

EncodedPair encode_pair(std::string_view query, std::string_view title, const Vocabulary& vocab, int max_len) {
    if (max_len < 3) throw DataError("encode_pair: max_len must be >= 3");
    const auto q = clean_tokens(query);
    const auto t = clean_tokens(title);
    std::vector<std::int32_t> ids;
    ids.reserve(q.size() + t.size() + 1);
    for (const auto& tok : q) ids.push_back(vocab.id_of(tok));
    ids.push_back(Vocabulary::kSep);
    for (const auto& tok : t) ids.push_back(vocab.id_of(tok));
    if (ids.size() > static_cast<std::size_t>(max_len)) ids.resize(static_cast<std::size_t>(max_len));
    EncodedPair pair;
    pair.token_ids = std::move(ids);
    pair.mask.assign(pair.token_ids.size(), 1);
    pair.token_ids.resize(static_cast<std::size_t>(max_len), Vocabulary::kPad);
    pair.mask.resize(static_cast<std::size_t>(max_len), 0);
    return pair;
}

namespace {

std::string pool_token(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%03d", prefix, i);
    return buf;
}

struct QuerySpec {
    std::string head;
    std::vector<std::string> attrs;
    std::string text;
    std::string locale;
};

}  // namespace

std::vector<Example> generate_synthetic(const SynthSpec& spec) {
    if (spec.n_queries < 1 || spec.items_per_query < 1 || spec.attr_pool_size < 1 ||
        spec.head_pool_size < 1 || spec.noise_pool_size < 1)
        throw DataError("generate_synthetic: all counts must be >= 1");
    if (!(spec.positive_ratio_target > 0.0 && spec.positive_ratio_target < 1.0))
        throw DataError("generate_synthetic: positive_ratio_target must be in (0,1)");

    const std::int64_t total = static_cast<std::int64_t>(spec.n_queries) * spec.items_per_query;
    const std::int64_t want_pos = std::llround(spec.positive_ratio_target * static_cast<double>(total));
    if (std::abs(static_cast<double>(want_pos) / static_cast<double>(total) - spec.positive_ratio_target) > 0.05)
        throw DataError("infeasible ratio");

    Rng rng(derive_seed(spec.seed, "synthetic"));
    const char* locales[] = {"us", "es", "jp"};

    // distinct queries: head + 1..3 distinct attributes
    std::vector<QuerySpec> queries;
    std::unordered_map<std::string, int> seen;
    int guard = 0;
    while (static_cast<int>(queries.size()) < spec.n_queries) {
        if (++guard > spec.n_queries * 1000)
            throw DataError("generate_synthetic: pools too small to produce distinct queries");
        QuerySpec q;
        q.head = pool_token("brand", static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.head_pool_size))));
        const int k_max = std::min(3, spec.attr_pool_size);
        const int k = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k_max)));
        while (static_cast<int>(q.attrs.size()) < k) {
            auto a = pool_token("attr", static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.attr_pool_size))));
            if (std::find(q.attrs.begin(), q.attrs.end(), a) == q.attrs.end()) q.attrs.push_back(a);
        }
        q.text = q.head;
        for (const auto& a : q.attrs) q.text += " " + a;
        if (seen.emplace(q.text, 1).second) {
            q.locale = locales[rng.uniform_int(3)];
            queries.push_back(std::move(q));
        }
    }

    // per-query positive quota summing exactly to want_pos
    std::vector<int> quota(static_cast<std::size_t>(spec.n_queries),
                           static_cast<int>(want_pos / spec.n_queries));
    std::int64_t rem = want_pos % spec.n_queries;
    std::vector<int> qidx(static_cast<std::size_t>(spec.n_queries));
    for (int i = 0; i < spec.n_queries; ++i) qidx[static_cast<std::size_t>(i)] = i;
    rng.shuffle(qidx);
    for (int i = 0; rem > 0 && i < spec.n_queries; ++i) {
        auto& q = quota[static_cast<std::size_t>(qidx[static_cast<std::size_t>(i)])];
        if (q < spec.items_per_query) {
            ++q;
            --rem;
        }
    }
    if (rem > 0) throw DataError("infeasible ratio");

    auto draw_noise = [&](std::vector<std::string>& toks) {
        const int n = static_cast<int>(rng.uniform_int(2));  // 0..1 noise tokens
        for (int i = 0; i < n; ++i)
            toks.push_back(pool_token("noise", static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.noise_pool_size)))));
    };

    std::vector<Example> out;
    out.reserve(static_cast<std::size_t>(total));
    for (int qi = 0; qi < spec.n_queries; ++qi) {
        const auto& q = queries[static_cast<std::size_t>(qi)];
        const int n_pos = quota[static_cast<std::size_t>(qi)];
        for (int item = 0; item < spec.items_per_query; ++item) {
            std::vector<std::string> toks;
            int label;
            if (item < n_pos) {
                // substitute: head + strict subset of attributes (>=1 missing)
                const auto k = q.attrs.size();
                const auto keep = rng.uniform_int(static_cast<std::uint64_t>(k));  // 0..k-1
                std::vector<std::size_t> order(k);
                for (std::size_t i = 0; i < k; ++i) order[i] = i;
                rng.shuffle(order);
                toks.push_back(q.head);
                for (std::size_t i = 0; i < keep; ++i) toks.push_back(q.attrs[order[i]]);
                label = 1;
            } else if (rng.uniform_int(2) == 0) {
                // fully relevant: head + all attributes
                toks.push_back(q.head);
                for (const auto& a : q.attrs) toks.push_back(a);
                label = 0;
            } else {
                // unrelated head + arbitrary attributes
                std::string other;
                do {
                    other = pool_token("brand", static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.head_pool_size))));
                } while (other == q.head && spec.head_pool_size > 1);
                toks.push_back(other);
                const int n_attr = static_cast<int>(rng.uniform_int(4));  // 0..3
                for (int i = 0; i < n_attr; ++i)
                    toks.push_back(pool_token("attr", static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.attr_pool_size)))));
                // a lone same-brand head with no attributes would read as label 1
                if (spec.head_pool_size == 1 && q.attrs.size() > 0) {
                    for (const auto& a : q.attrs) toks.push_back(a);
                }
                label = 0;
            }
            draw_noise(toks);
            Example ex;
            ex.id = static_cast<std::int64_t>(out.size());
            ex.query = q.text;
            ex.locale = q.locale;
            ex.label = label;
            for (std::size_t i = 0; i < toks.size(); ++i) {
                if (i) ex.title += " ";
                ex.title += toks[i];
            }
            out.push_back(std::move(ex));
        }
    }
    return out;
}

int synthetic_label_oracle(const Example& ex) {
    const auto q = clean_tokens(ex.query);
    const auto t = clean_tokens(ex.title);
    if (q.empty()) return 0;
    auto has = [&](const std::string& tok) { return std::find(t.begin(), t.end(), tok) != t.end(); };
    if (!has(q[0])) return 0;  // head missing: unrelated
    for (std::size_t i = 1; i < q.size(); ++i)
        if (!has(q[i])) return 1;  // head present, attribute missing: substitute
    return 0;                      // fully relevant
}

namespace {

// RFC-4180-ish CSV: quoted fields may contain commas, quotes (doubled) and newlines.
std::vector<std::string> parse_csv_record(std::istream& in, bool& eof) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    bool any = false;
    int c;
    while ((c = in.get()) != EOF) {
        any = true;
        if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    field += '"';
                    in.get();
                } else {
                    quoted = false;
                }
            } else {
                field += static_cast<char>(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            break;
        } else if (c == '\r') {
            if (in.peek() == '\n') in.get();
            break;
        } else {
            field += static_cast<char>(c);
        }
    }
    eof = !any && c == EOF;
    if (!eof) fields.push_back(std::move(field));
    return fields;
}

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    return out + "\"";
}

}  // namespace

std::vector<Example> load_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open data file: " + path);
    bool eof = false;
    auto header = parse_csv_record(in, eof);
    if (eof) throw DataError("empty data file: " + path);
    int col_query = -1, col_title = -1, col_locale = -1, col_label = -1;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "query") col_query = static_cast<int>(i);
        else if (header[i] == "product_title") col_title = static_cast<int>(i);
        else if (header[i] == "locale") col_locale = static_cast<int>(i);
        else if (header[i] == "label") col_label = static_cast<int>(i);
    }
    for (auto [col, name] : {std::pair{col_query, "query"}, {col_title, "product_title"},
                             {col_locale, "locale"}, {col_label, "label"}})
        if (col < 0) throw DataError(std::string("missing column: ") + name);

    std::vector<Example> out;
    std::int64_t row = 1;  // header is row 1
    while (true) {
        auto fields = parse_csv_record(in, eof);
        if (eof) break;
        ++row;
        if (fields.size() == 1 && fields[0].empty()) continue;  // trailing blank line
        if (fields.size() < header.size())
            throw DataError("row " + std::to_string(row) + ": expected " +
                            std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
        Example ex;
        ex.id = static_cast<std::int64_t>(out.size());
        ex.query = fields[static_cast<std::size_t>(col_query)];
        ex.title = fields[static_cast<std::size_t>(col_title)];
        ex.locale = fields[static_cast<std::size_t>(col_locale)];
        const std::string& lab = fields[static_cast<std::size_t>(col_label)];
        if (lab == "1" || lab == "substitute") ex.label = 1;
        else if (lab == "0" || lab == "no_substitute") ex.label = 0;
        else throw DataError("row " + std::to_string(row) + ": unparseable label \"" + lab + "\"");
        out.push_back(std::move(ex));
    }
    return out;
}

void save_csv(const std::string& path, const std::vector<Example>& examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write data file: " + path);
    out << "query,product_title,locale,label\n";
    for (const auto& ex : examples)
        out << csv_quote(ex.query) << "," << csv_quote(ex.title) << "," << csv_quote(ex.locale)
            << "," << ex.label << "\n";
}

}  // namespace subkit
