#pragma once

// Fine-grained class name decomposition: "a small brown dog" -> subject
// "dog" + attributes ["small", "brown"]. Parsing is pluggable (rule-based
// fallback here, LLM-backed parser in llm.hpp) and cached; parses are
// validated against the input so ungrounded subjects get flagged.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace fgovd::vocab {

enum class ParseStatus { ok, hallucination, other_error };

inline const char* to_string(ParseStatus s) {
    switch (s) {
        case ParseStatus::ok: return "ok";
        case ParseStatus::hallucination: return "hallucination";
        default: return "other_error";
    }
}

inline ParseStatus parse_status_from(const std::string& s) {
    if (s == "ok") return ParseStatus::ok;
    if (s == "hallucination") return ParseStatus::hallucination;
    return ParseStatus::other_error;
}

struct SubjectParse {
    std::string input_name;
    std::string subject;
    std::vector<std::string> attributes;
    std::string parser_id;
    ParseStatus status = ParseStatus::ok;

    bool operator==(const SubjectParse&) const = default;
};

struct FineGrainedClass {
    int class_id = 0;
    std::string full_name;
    std::string subject;
    std::vector<std::string> attributes;
};

// ---- tokenization helpers ----

inline std::string lowercase(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        while (!tok.empty() && std::ispunct(static_cast<unsigned char>(tok.front()))) tok.erase(tok.begin());
        while (!tok.empty() && std::ispunct(static_cast<unsigned char>(tok.back()))) tok.pop_back();
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

inline std::string join(const std::vector<std::string>& toks, size_t from, size_t to) {
    std::string out;
    for (size_t i = from; i < to && i < toks.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += toks[i];
    }
    return out;
}

// Word lists backing the rule-based parser and validate_parse. Callers can
// extend attribute_words (the "configured attribute-word list").
struct ParserLexicon {
    std::set<std::string> articles = {"a", "an", "the", "this", "that", "its"};
    std::set<std::string> prepositions = {"with", "on", "in", "of", "at", "under",
                                          "over", "near", "beside", "behind", "above", "below"};
    // modifiers that attach to the following word ("dark brown")
    std::set<std::string> intensifiers = {"dark", "light", "pale", "bright", "deep", "dull", "very"};
    std::set<std::string> attribute_words = {
        // colors
        "red", "blue", "green", "yellow", "brown", "black", "white", "gray", "grey",
        "orange", "purple", "pink", "golden", "silver", "beige", "cyan", "magenta", "maroon",
        // materials
        "wooden", "metal", "metallic", "plastic", "leather", "glass", "steel", "cotton",
        "woolen", "ceramic", "rubber", "paper", "stone", "wicker", "velvet", "denim",
        // sizes and shapes
        "small", "large", "big", "tiny", "huge", "little", "tall", "short", "long",
        "wide", "narrow", "round", "square", "flat", "thin", "thick", "curved",
        // patterns
        "striped", "spotted", "dotted", "checkered", "plain", "floral", "plaid", "woven",
        // transparency and surface
        "transparent", "opaque", "translucent", "shiny", "glossy", "matte", "rough", "smooth",
        // misc adjectives
        "old", "new", "young", "dirty", "clean", "broken", "rusty", "soft", "fluffy",
        "furry", "empty", "full", "open", "closed", "folded", "painted", "polished",
    };

    bool is_attribute_word(const std::string& w) const { return attribute_words.count(lowercase(w)) > 0; }
    bool is_article(const std::string& w) const { return articles.count(lowercase(w)) > 0; }
    bool is_preposition(const std::string& w) const { return prepositions.count(lowercase(w)) > 0; }
    bool is_intensifier(const std::string& w) const { return intensifiers.count(lowercase(w)) > 0; }
};

inline const ParserLexicon& default_lexicon() {
    static const ParserLexicon lex;
    return lex;
}

// Deterministic fallback parser: the last non-attribute token of the head
// noun phrase is the subject; leading modifiers become attributes; a
// prepositional tail ("with a head", "on the conveyor belt") is kept as one
// verbatim attribute phrase.
inline SubjectParse rule_based_parse(const std::string& name, const ParserLexicon& lex = default_lexicon()) {
    if (name.empty()) throw std::invalid_argument("rule_based_parse: empty name");
    SubjectParse p;
    p.input_name = name;
    p.parser_id = "rules";

    const std::vector<std::string> toks = tokenize(name);
    size_t head_end = toks.size();
    std::string prep_phrase;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (i > 0 && lex.is_preposition(toks[i])) {
            head_end = i;
            prep_phrase = join(toks, i, toks.size());
            break;
        }
    }

    std::vector<std::string> head;
    for (size_t i = 0; i < head_end; ++i)
        if (!lex.is_article(toks[i])) head.push_back(toks[i]);

    if (head.empty() || lex.is_attribute_word(head.back())) {
        p.subject = name;
        p.status = ParseStatus::other_error;
        return p;
    }

    p.subject = head.back();
    for (size_t i = 0; i + 1 < head.size(); ++i) {
        if (lex.is_intensifier(head[i]) && i + 2 < head.size()) {
            p.attributes.push_back(head[i] + " " + head[i + 1]);
            ++i;
        } else {
            p.attributes.push_back(head[i]);
        }
    }
    if (!prep_phrase.empty()) p.attributes.push_back(prep_phrase);

    // invariant: no duplicates, nothing equal to the subject
    std::vector<std::string> dedup;
    for (auto& a : p.attributes) {
        if (lowercase(a) == lowercase(p.subject)) continue;
        if (std::find(dedup.begin(), dedup.end(), a) == dedup.end()) dedup.push_back(a);
    }
    p.attributes = std::move(dedup);
    p.status = ParseStatus::ok;
    return p;
}

// Optional hypernym map ("husky" -> "dog") for superclass subjects.
using HypernymLexicon = std::map<std::string, std::string>;

inline HypernymLexicon load_hypernym_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open lexicon file: " + path);
    HypernymLexicon lex;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string child, parent;
        if (ls >> child >> parent) lex[lowercase(child)] = lowercase(parent);
    }
    return lex;
}

// Grounding check: ok if the subject occurs in the original text (or a
// hypernym of some original token matches it), hallucination otherwise;
// other_error when the "subject" is really an attribute word.
inline ParseStatus validate_parse(const SubjectParse& parse, const std::string& original,
                                  const HypernymLexicon* hypernyms = nullptr,
                                  const ParserLexicon& lex = default_lexicon()) {
    const std::string subj = lowercase(parse.subject);
    if (subj.empty()) return ParseStatus::other_error;
    if (lex.attribute_words.count(subj)) return ParseStatus::other_error;

    std::set<std::string> orig_tokens;
    for (auto& t : tokenize(original)) orig_tokens.insert(lowercase(t));

    bool grounded = true;
    for (auto& st : tokenize(subj)) {
        if (!orig_tokens.count(lowercase(st))) {
            grounded = false;
            break;
        }
    }
    if (grounded && !tokenize(subj).empty()) return ParseStatus::ok;

    if (hypernyms) {
        for (auto& t : orig_tokens) {
            auto it = hypernyms->find(t);
            if (it != hypernyms->end() && it->second == subj) return ParseStatus::ok;
        }
    }
    return ParseStatus::hallucination;
}

// ---- cache ----

// Text cache keyed by the exact class-name string (no normalization).
// JSON-lines on disk: a version header then one record per name with a
// stable field order. Reads may run concurrently; writes are serialized.
class ParseCache {
public:
    static constexpr int kVersion = 1;

    std::optional<SubjectParse> lookup(const std::string& name) const {
        std::shared_lock lock(mutex_);
        auto it = entries_.find(name);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void store(const SubjectParse& parse) {
        std::unique_lock lock(mutex_);
        entries_[parse.input_name] = parse;
    }

    size_t size() const {
        std::shared_lock lock(mutex_);
        return entries_.size();
    }

    int version() const { return version_; }

    void save(const std::string& path) const {
        std::shared_lock lock(mutex_);
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write cache file: " + path);
        nlohmann::json header = {{"type", "header"}, {"version", version_}};
        out << header.dump() << "\n";
        for (const auto& [name, p] : entries_) {
            nlohmann::json rec = {
                {"attributes", p.attributes}, {"name", name},      {"parser", p.parser_id},
                {"status", to_string(p.status)}, {"subject", p.subject},
            };
            out << rec.dump() << "\n";
        }
    }

    void load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open cache file: " + path);
        std::unique_lock lock(mutex_);
        entries_.clear();
        std::string line;
        bool saw_header = false;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line);
            if (!saw_header) {
                if (j.value("type", "") != "header")
                    throw std::runtime_error("cache file missing header: " + path);
                version_ = j.value("version", kVersion);
                saw_header = true;
                continue;
            }
            SubjectParse p;
            p.input_name = j.at("name").get<std::string>();
            p.subject = j.at("subject").get<std::string>();
            p.attributes = j.at("attributes").get<std::vector<std::string>>();
            p.parser_id = j.value("parser", "unknown");
            p.status = parse_status_from(j.value("status", "ok"));
            entries_[p.input_name] = p;
        }
    }

private:
    mutable std::shared_mutex mutex_;
    std::map<std::string, SubjectParse> entries_;
    int version_ = kVersion;
};

// ---- parser interface & batch construction ----

class ClassNameParser {
public:
    virtual ~ClassNameParser() = default;
    virtual SubjectParse parse(const std::string& name) = 0;
    virtual std::string id() const = 0;
};

class RuleBasedParser final : public ClassNameParser {
public:
    explicit RuleBasedParser(ParserLexicon lex = default_lexicon()) : lex_(std::move(lex)) {}
    SubjectParse parse(const std::string& name) override { return rule_based_parse(name, lex_); }
    std::string id() const override { return "rules"; }

private:
    ParserLexicon lex_;
};

struct VocabularyReport {
    int total = 0;
    int ok = 0;
    int hallucination = 0;
    int other_error = 0;
    int parser_invocations = 0;
    int cache_hits = 0;
    std::vector<SubjectParse> parses; // one per input, in order
};

inline SubjectParse parse_class_name(const std::string& name, ClassNameParser& parser,
                                     ParseCache* cache = nullptr,
                                     const HypernymLexicon* hypernyms = nullptr,
                                     VocabularyReport* report = nullptr) {
    if (name.empty()) throw std::invalid_argument("parse_class_name: empty name");
    if (cache) {
        if (auto hit = cache->lookup(name)) {
            if (report) report->cache_hits++;
            return *hit;
        }
    }
    SubjectParse p = parser.parse(name);
    if (report) report->parser_invocations++;
    if (p.status == ParseStatus::ok) p.status = validate_parse(p, name, hypernyms);
    if (cache) cache->store(p);
    return p;
}

inline FineGrainedClass to_fine_grained_class(int class_id, const SubjectParse& p) {
    FineGrainedClass c;
    c.class_id = class_id;
    c.full_name = p.input_name;
    c.subject = p.subject;
    for (auto& a : p.attributes) {
        if (lowercase(a) == lowercase(c.subject)) continue;
        if (std::find(c.attributes.begin(), c.attributes.end(), a) == c.attributes.end())
            c.attributes.push_back(a);
    }
    return c;
}

// One FineGrainedClass per name, class_id = position. Per-name failures are
// recorded in the report; the batch never aborts.
inline std::vector<FineGrainedClass> build_vocabulary(const std::vector<std::string>& names,
                                                      ClassNameParser& parser,
                                                      ParseCache* cache = nullptr,
                                                      const HypernymLexicon* hypernyms = nullptr,
                                                      VocabularyReport* report = nullptr) {
    if (names.empty()) throw std::invalid_argument("build_vocabulary: no names");
    VocabularyReport local;
    VocabularyReport& rep = report ? *report : local;
    std::vector<FineGrainedClass> out;
    out.reserve(names.size());
    for (size_t i = 0; i < names.size(); ++i) {
        SubjectParse p;
        try {
            p = parse_class_name(names[i], parser, cache, hypernyms, &rep);
        } catch (const std::exception&) {
            p.input_name = names[i];
            p.subject = names[i];
            p.parser_id = parser.id();
            p.status = ParseStatus::other_error;
        }
        rep.total++;
        switch (p.status) {
            case ParseStatus::ok: rep.ok++; break;
            case ParseStatus::hallucination: rep.hallucination++; break;
            case ParseStatus::other_error: rep.other_error++; break;
        }
        rep.parses.push_back(p);
        out.push_back(to_fine_grained_class(static_cast<int>(i), p));
    }
    return out;
}

} // namespace fgovd::vocab
