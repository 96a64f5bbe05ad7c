#include "facts2story/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

namespace f2s {

namespace {

using json = nlohmann::json;

// Splits a UTF-8 string into codepoint strings. Malformed bytes become U+FFFD
// so every token string stays valid UTF-8 for serialization.
std::vector<std::string> utf8_chars(const std::string& s) {
    static const std::string kReplacement = "\xEF\xBF\xBD";
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        const unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        if (c < 0x80) len = 1;
        else if ((c >> 5) == 0x6) len = 2;
        else if ((c >> 4) == 0xE) len = 3;
        else if ((c >> 3) == 0x1E) len = 4;
        else {
            out.push_back(kReplacement);
            ++i;
            continue;
        }
        if (i + len > s.size()) {
            out.push_back(kReplacement);
            ++i;
            continue;
        }
        bool valid = true;
        for (std::size_t k = 1; k < len; ++k)
            if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) valid = false;
        if (!valid) {
            out.push_back(kReplacement);
            ++i;
            continue;
        }
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

std::vector<std::string> split_words(const std::string& normalized) {
    std::vector<std::string> words;
    std::size_t start = 0;
    while (start < normalized.size()) {
        std::size_t end = normalized.find(' ', start);
        if (end == std::string::npos) end = normalized.size();
        if (end > start) words.push_back(normalized.substr(start, end - start));
        start = end + 1;
    }
    return words;
}

// Applies one merge left to right, non-overlapping.
void apply_merge(std::vector<std::string>& symbols, const std::string& a, const std::string& b,
                 const std::string& merged) {
    std::vector<std::string> out;
    out.reserve(symbols.size());
    std::size_t i = 0;
    while (i < symbols.size()) {
        if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
            out.push_back(merged);
            i += 2;
        } else {
            out.push_back(symbols[i]);
            i += 1;
        }
    }
    symbols = std::move(out);
}

json parse_jsonl_line(const std::string& line, const std::string& path, std::size_t line_no) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw DataError(path + ":" + std::to_string(line_no) + ": invalid JSON record");
    return j;
}

std::string get_string(const json& j, const char* key, const std::string& fallback = "") {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) return fallback;
    return it->get<std::string>();
}

long long count_words(const std::string& text) {
    return static_cast<long long>(split_words(normalize_whitespace(text)).size());
}

}  // namespace

std::size_t count_sentences(const std::string& text) {
    std::size_t count = 0;
    bool in_sentence = false;
    bool in_terminator = false;
    for (char c : text) {
        const bool terminator = c == '.' || c == '?' || c == '!';
        if (terminator) {
            if (in_sentence && !in_terminator) ++count;
            in_terminator = true;
            in_sentence = false;
        } else {
            in_terminator = false;
            if (!std::isspace(static_cast<unsigned char>(c))) in_sentence = true;
        }
    }
    if (in_sentence) ++count;
    return count;
}

std::string normalize_whitespace(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool in_space = true;  // swallow leading whitespace
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!in_space) out.push_back(' ');
            in_space = true;
        } else {
            out.push_back(c);
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

TokenId Vocabulary::intern(const std::string& token) {
    auto it = token_to_id_.find(token);
    if (it != token_to_id_.end()) return it->second;
    const TokenId id = static_cast<TokenId>(id_to_token_.size());
    id_to_token_.push_back(token);
    token_to_id_.emplace(token, id);
    return id;
}

std::vector<std::string> Vocabulary::word_symbols(const std::string& marked_word) const {
    std::vector<std::string> chars = utf8_chars(marked_word);
    std::vector<std::string> symbols;
    symbols.reserve(chars.size());
    std::size_t i = 0;
    if (!chars.empty() && chars[0] == " " && chars.size() > 1) {
        symbols.push_back(" " + chars[1]);
        i = 2;
    }
    for (; i < chars.size(); ++i) symbols.push_back(chars[i]);
    return symbols;
}

std::vector<std::string> Vocabulary::encode_word(const std::string& marked_word) const {
    std::vector<std::string> symbols = word_symbols(marked_word);
    for (const auto& [a, b] : merges_) apply_merge(symbols, a, b, a + b);
    return symbols;
}

TokenSequence Vocabulary::encode(const std::string& text, bool continuation) const {
    const std::string normalized = normalize_whitespace(text);
    TokenSequence ids;
    const std::vector<std::string> words = split_words(normalized);
    for (std::size_t w = 0; w < words.size(); ++w) {
        const bool marked = continuation || w > 0;
        const std::string word = marked ? " " + words[w] : words[w];
        for (const auto& sym : encode_word(word)) {
            auto it = token_to_id_.find(sym);
            ids.push_back(it == token_to_id_.end() ? kUnk : it->second);
        }
    }
    return ids;
}

std::string Vocabulary::decode(const TokenSequence& seq) const {
    std::string out;
    for (TokenId id : seq) {
        if (id < 0 || id >= size()) throw DataError("id out of range");
        if (id == kPad) continue;
        if (id == kBlank) {
            out += " _";
            continue;
        }
        if (id == kUnk) {
            out += "<unk>";
            continue;
        }
        out += id_to_token_[static_cast<std::size_t>(id)];
    }
    return out;
}

const std::string& Vocabulary::token(TokenId id) const {
    if (id < 0 || id >= size()) throw DataError("id out of range");
    return id_to_token_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
}

Vocabulary train_bpe(const std::vector<PlotRecord>& corpus, int num_merges) {
    if (num_merges < 0) throw DataError("num_merges must be non-negative");

    // Word frequencies, with the leading-space marker already attached.
    std::map<std::string, long long> word_freq;
    for (const auto& rec : corpus) {
        const std::vector<std::string> words = split_words(normalize_whitespace(rec.plot));
        for (std::size_t w = 0; w < words.size(); ++w)
            word_freq[w == 0 ? words[w] : " " + words[w]] += 1;
    }
    if (word_freq.empty()) throw DataError("empty corpus");

    Vocabulary vocab;
    vocab.intern("<pad>");
    vocab.intern("<blank>");
    vocab.intern("<unk>");

    std::vector<std::pair<std::vector<std::string>, long long>> words;
    words.reserve(word_freq.size());
    std::map<std::string, bool> alphabet;
    for (const auto& [word, freq] : word_freq) {
        std::vector<std::string> symbols = vocab.word_symbols(word);
        for (const auto& s : symbols) alphabet[s] = true;
        words.emplace_back(std::move(symbols), freq);
    }
    for (const auto& [sym, _] : alphabet) vocab.intern(sym);
    vocab.alphabet_count_ = alphabet.size();

    for (int m = 0; m < num_merges; ++m) {
        std::map<std::pair<std::string, std::string>, long long> pair_count;
        for (const auto& [symbols, freq] : words)
            for (std::size_t i = 0; i + 1 < symbols.size(); ++i)
                pair_count[{symbols[i], symbols[i + 1]}] += freq;

        std::pair<std::string, std::string> best;
        long long best_count = 0;
        for (const auto& [pair, count] : pair_count) {
            if (count > best_count) {
                best = pair;
                best_count = count;
            }
        }
        if (best_count < 2) break;  // merging singletons only inflates the vocabulary

        const std::string merged = best.first + best.second;
        vocab.merges_.push_back(best);
        vocab.intern(merged);
        for (auto& [symbols, freq] : words) apply_merge(symbols, best.first, best.second, merged);
    }
    return vocab;
}

void Vocabulary::save(const std::string& path) const {
    json j;
    j["version"] = 1;
    json alphabet = json::array();
    for (std::size_t i = 3; i < 3 + alphabet_count_; ++i) alphabet.push_back(id_to_token_[i]);
    j["alphabet"] = alphabet;
    json merges = json::array();
    for (const auto& [a, b] : merges_) merges.push_back(json::array({a, b}));
    j["merges"] = merges;
    j["specials"] = {{"pad", kPad}, {"blank", kBlank}, {"unk", kUnk}};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file: " + path);
    out << j.dump(2) << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary file: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object() || j.value("version", 0) != 1)
        throw DataError("unsupported vocabulary file: " + path);

    Vocabulary vocab;
    vocab.intern("<pad>");
    vocab.intern("<blank>");
    vocab.intern("<unk>");
    for (const auto& sym : j.at("alphabet")) vocab.intern(sym.get<std::string>());
    vocab.alphabet_count_ = j.at("alphabet").size();
    for (const auto& m : j.at("merges")) {
        std::pair<std::string, std::string> pair{m.at(0).get<std::string>(), m.at(1).get<std::string>()};
        vocab.merges_.push_back(pair);
        vocab.intern(pair.first + pair.second);
    }
    return vocab;
}

StatsReport corpus_stats(const std::vector<AlignedExample>& dataset, const Vocabulary* vocab) {
    if (dataset.empty()) throw DataError("empty dataset");

    StatsReport report;
    report.n = static_cast<int>(dataset.size());
    report.mean_word_ratio = std::numeric_limits<double>::quiet_NaN();

    double token_ratio_sum = 0.0, mask_sum = 0.0, word_ratio_sum = 0.0;
    double story_sum = 0.0, fact_sum = 0.0;
    for (const auto& ex : dataset) {
        const double t = static_cast<double>(ex.story.size());
        const double f = static_cast<double>(ex.fact_tokens.size());
        if (t <= 0.0) throw DataError("aligned example with empty story");
        token_ratio_sum += f / t;
        mask_sum += 1.0 - f / t;
        story_sum += t;
        fact_sum += f;
        report.story_length_hist[static_cast<int>(t) / report.histogram_bucket_width *
                                 report.histogram_bucket_width] += 1;
        report.fact_length_hist[static_cast<int>(f) / report.histogram_bucket_width *
                                report.histogram_bucket_width] += 1;
        if (vocab != nullptr) {
            const long long story_words = count_words(vocab->decode(ex.story));
            const long long fact_words = count_words(vocab->decode(ex.fact_tokens));
            if (story_words > 0)
                word_ratio_sum += static_cast<double>(fact_words) / static_cast<double>(story_words);
        }
    }
    report.mean_token_ratio = token_ratio_sum / report.n;
    report.mean_mask_rate = mask_sum / report.n;
    report.mean_story_tokens = story_sum / report.n;
    report.mean_fact_tokens = fact_sum / report.n;
    if (vocab != nullptr) report.mean_word_ratio = word_ratio_sum / report.n;
    return report;
}

std::vector<PlotRecord> read_plots(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open plots file: " + path);
    std::vector<PlotRecord> plots;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = parse_jsonl_line(line, path, line_no);
        PlotRecord rec;
        rec.id = get_string(j, "id");
        rec.title = get_string(j, "title");
        rec.plot = get_string(j, "plot");
        rec.published = get_string(j, "published");
        if (rec.id.empty() || rec.plot.empty())
            throw DataError(path + ":" + std::to_string(line_no) + ": plot record needs id and plot");
        plots.push_back(std::move(rec));
    }
    return plots;
}

std::vector<ExtractionTuple> read_extractions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open extractions file: " + path);
    std::vector<ExtractionTuple> tuples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = parse_jsonl_line(line, path, line_no);
        ExtractionTuple t;
        t.doc_id = get_string(j, "doc_id");
        t.subject = get_string(j, "subject");
        t.relation = get_string(j, "relation");
        t.object = get_string(j, "object");
        t.sentence_index = j.value("sentence_index", 0);
        if (t.doc_id.empty() || t.subject.empty() || t.relation.empty() || t.sentence_index < 0)
            throw DataError(path + ":" + std::to_string(line_no) + ": invalid extraction record");
        tuples.push_back(std::move(t));
    }
    return tuples;
}

void write_plots(const std::string& path, const std::vector<PlotRecord>& plots) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write plots file: " + path);
    for (const auto& rec : plots) {
        json j = {{"id", rec.id}, {"title", rec.title}, {"plot", rec.plot}};
        if (!rec.published.empty()) j["published"] = rec.published;
        out << j.dump() << "\n";
    }
}

void write_extractions(const std::string& path, const std::vector<ExtractionTuple>& tuples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write extractions file: " + path);
    for (const auto& t : tuples) {
        json j = {{"doc_id", t.doc_id},
                  {"subject", t.subject},
                  {"relation", t.relation},
                  {"object", t.object},
                  {"sentence_index", t.sentence_index}};
        out << j.dump() << "\n";
    }
}

}  // namespace f2s
