#pragma once

// LLM-backed subject identification. The backend is abstract (request =
// prompt text, response = text) with three implementations: an HTTP client,
// a transcript replayer for offline tests, and a recording wrapper that
// captures live transcripts. Malformed responses are retried once, then the
// parse falls back to the rule-based parser.

#include <deque>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fgovd/vocabulary.hpp"

namespace fgovd::llm {

// Retriable transport failure, distinct from a parse failure.
struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class TextCompletionClient {
public:
    virtual ~TextCompletionClient() = default;
    virtual std::string complete(const std::string& prompt) = 0;
    virtual std::string id() const = 0;
};

// ---- transcripts (shared record/replay format, one JSON record per line) ----

struct TranscriptRecord {
    std::string request;
    std::string response;
};

class TranscriptStore {
public:
    void add(const std::string& request, const std::string& response) {
        std::lock_guard lock(mutex_);
        records_.push_back({request, response});
        replay_[request].push_back(response);
    }

    // replay responses for equal requests in recorded order
    std::string take(const std::string& request) {
        std::lock_guard lock(mutex_);
        auto it = replay_.find(request);
        if (it == replay_.end() || it->second.empty())
            throw TransportError("transcript has no response for request");
        std::string r = it->second.front();
        it->second.pop_front();
        return r;
    }

    size_t size() const {
        std::lock_guard lock(mutex_);
        return records_.size();
    }

    void save(const std::string& path) const {
        std::lock_guard lock(mutex_);
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write transcript: " + path);
        for (const auto& r : records_) {
            nlohmann::json j = {{"request", r.request}, {"response", r.response}};
            out << j.dump() << "\n";
        }
    }

    void load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open transcript: " + path);
        std::lock_guard lock(mutex_);
        records_.clear();
        replay_.clear();
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = nlohmann::json::parse(line);
            TranscriptRecord r{j.at("request").get<std::string>(), j.at("response").get<std::string>()};
            records_.push_back(r);
            replay_[r.request].push_back(r.response);
        }
    }

private:
    mutable std::mutex mutex_;
    std::vector<TranscriptRecord> records_;
    std::map<std::string, std::deque<std::string>> replay_;
};

class ReplayClient final : public TextCompletionClient {
public:
    explicit ReplayClient(std::shared_ptr<TranscriptStore> store) : store_(std::move(store)) {}
    std::string complete(const std::string& prompt) override { return store_->take(prompt); }
    std::string id() const override { return "replay"; }

private:
    std::shared_ptr<TranscriptStore> store_;
};

class RecordingClient final : public TextCompletionClient {
public:
    RecordingClient(std::shared_ptr<TextCompletionClient> inner, std::shared_ptr<TranscriptStore> store)
        : inner_(std::move(inner)), store_(std::move(store)) {}

    std::string complete(const std::string& prompt) override {
        std::string response = inner_->complete(prompt);
        store_->add(prompt, response);
        return response;
    }
    std::string id() const override { return "record:" + inner_->id(); }

private:
    std::shared_ptr<TextCompletionClient> inner_;
    std::shared_ptr<TranscriptStore> store_;
};

// Bounds concurrent in-flight requests across threads.
class ThrottledClient final : public TextCompletionClient {
public:
    ThrottledClient(std::shared_ptr<TextCompletionClient> inner, int max_in_flight)
        : inner_(std::move(inner)), sem_(max_in_flight) {}

    std::string complete(const std::string& prompt) override {
        sem_.acquire();
        try {
            std::string r = inner_->complete(prompt);
            sem_.release();
            return r;
        } catch (...) {
            sem_.release();
            throw;
        }
    }
    std::string id() const override { return inner_->id(); }

private:
    std::shared_ptr<TextCompletionClient> inner_;
    std::counting_semaphore<64> sem_;
};

struct HttpClientConfig {
    std::string host = "localhost";
    int port = 8080;
    std::string path = "/v1/complete";
    int timeout_seconds = 30;
    int retries = 2;
};

// ---- prompts ----

// Two in-context examples; the instruction pins the structured reply format
// that parse_llm_response expects.
inline std::string subject_identification_prompt(const std::string& name) {
    return "Split an object class name into its subject (the head noun naming the object)\n"
           "and its descriptive attributes. Reply with exactly two lines:\n"
           "subject: <single noun phrase>\n"
           "attributes: <comma-separated phrases, or none>\n"
           "\n"
           "name: a small brown dog\n"
           "subject: dog\n"
           "attributes: small, brown\n"
           "\n"
           "name: dark brown wooden lamp\n"
           "subject: lamp\n"
           "attributes: dark brown, wooden\n"
           "\n"
           "name: " +
           name + "\n";
}

// Attribute extension for coarse class names (used to give base classes an
// attribute set when none is annotated).
inline std::string attribute_extension_prompt(const std::string& subject) {
    return "List typical visual attributes (colors, materials, patterns) one might use to\n"
           "describe a \"" +
           subject +
           "\". Reply with one line:\n"
           "attributes: <comma-separated phrases>\n";
}

inline std::vector<std::string> split_csv_phrases(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
        size_t b = cur.find_first_not_of(" \t");
        size_t e = cur.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        std::string phrase = cur.substr(b, e - b + 1);
        if (!phrase.empty() && vocab::lowercase(phrase) != "none") out.push_back(phrase);
    }
    return out;
}

// Parses the strict two-line reply; returns false when malformed.
inline bool parse_llm_response(const std::string& response, vocab::SubjectParse& out) {
    std::istringstream in(response);
    std::string line;
    bool have_subject = false, have_attributes = false;
    while (std::getline(in, line)) {
        auto lower = vocab::lowercase(line);
        if (lower.rfind("subject:", 0) == 0) {
            std::string v = line.substr(8);
            size_t b = v.find_first_not_of(" \t");
            if (b == std::string::npos) return false;
            size_t e = v.find_last_not_of(" \t\r");
            out.subject = v.substr(b, e - b + 1);
            have_subject = true;
        } else if (lower.rfind("attributes:", 0) == 0) {
            out.attributes = split_csv_phrases(line.substr(11));
            have_attributes = true;
        }
    }
    return have_subject && have_attributes && !out.subject.empty();
}

class LlmParser final : public vocab::ClassNameParser {
public:
    LlmParser(std::shared_ptr<TextCompletionClient> client,
              vocab::ParserLexicon lexicon = vocab::default_lexicon())
        : client_(std::move(client)), lexicon_(std::move(lexicon)) {}

    vocab::SubjectParse parse(const std::string& name) override {
        const std::string prompt = subject_identification_prompt(name);
        for (int attempt = 0; attempt < 2; ++attempt) {
            std::string response = client_->complete(prompt);
            if (response.empty()) {
                vocab::SubjectParse p;
                p.input_name = name;
                p.subject = name;
                p.parser_id = id();
                p.status = vocab::ParseStatus::other_error;
                return p;
            }
            vocab::SubjectParse p;
            p.input_name = name;
            p.parser_id = id();
            if (parse_llm_response(response, p)) {
                p.status = vocab::ParseStatus::ok;
                return p;
            }
        }
        // malformed twice: downgrade to the deterministic parser
        return vocab::rule_based_parse(name, lexicon_);
    }

    std::string id() const override { return "llm:" + client_->id(); }

private:
    std::shared_ptr<TextCompletionClient> client_;
    vocab::ParserLexicon lexicon_;
};

inline std::vector<std::string> expand_attributes(const std::string& subject,
                                                  TextCompletionClient& client) {
    std::string response = client.complete(attribute_extension_prompt(subject));
    std::istringstream in(response);
    std::string line;
    while (std::getline(in, line)) {
        auto lower = vocab::lowercase(line);
        if (lower.rfind("attributes:", 0) == 0) return split_csv_phrases(line.substr(11));
    }
    return {};
}

} // namespace fgovd::llm
