#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "elib/error.hpp"

namespace elib {

/// Byte-level tokenizer: 256 byte tokens plus BOS/EOS/PAD.
struct Tokenizer {
    static constexpr int kVocabSize = 259;
    static constexpr int kBos = 256;
    static constexpr int kEos = 257;
    static constexpr int kPad = 258;

    static std::vector<int> encode(const std::string& text) {
        std::vector<int> tokens;
        tokens.reserve(text.size());
        for (unsigned char c : text) tokens.push_back(static_cast<int>(c));
        return tokens;
    }

    static std::string decode(const std::vector<int>& tokens) {
        std::string out;
        out.reserve(tokens.size());
        for (int id : tokens) {
            if (id < 0 || id >= kVocabSize) {
                throw TokenError("decode: token id out of range: " + std::to_string(id));
            }
            if (id < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
            // special ids carry no bytes
        }
        return out;
    }
};

struct EvalCorpus {
    std::vector<std::vector<int>> windows;
    int context_len = 0;
    int stride = 0;
};

inline EvalCorpus make_corpus(const std::vector<int>& tokens, int context_len, int stride) {
    if (context_len < 2) throw MetricError("corpus: context_len must be >= 2");
    if (stride < 1 || stride > context_len) {
        throw MetricError("corpus: stride must be in [1, context_len]");
    }
    if (tokens.size() < static_cast<size_t>(context_len)) {
        throw MetricError("corpus shorter than context_len");
    }
    EvalCorpus corpus;
    corpus.context_len = context_len;
    corpus.stride = stride;
    const size_t n = tokens.size();
    for (size_t start = 0; start + context_len <= n; start += stride) {
        corpus.windows.emplace_back(tokens.begin() + start, tokens.begin() + start + context_len);
    }
    return corpus;
}

inline EvalCorpus load_corpus(const std::string& path, int context_len, int stride) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open corpus: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return make_corpus(Tokenizer::encode(ss.str()), context_len, stride);
}

/// One prompt per line.
inline std::vector<std::string> load_prompts(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open prompt file: " + path);
    std::vector<std::string> prompts;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty()) prompts.push_back(line);
    }
    return prompts;
}

}  // namespace elib
