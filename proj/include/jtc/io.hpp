#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "jtc/encoder.hpp"
#include "jtc/tensor.hpp"

namespace jtc {

// File formats:
//   corpus        JSON lines {"id", "text", "positive"?, "negatives"?: [...]}
//   teacher file  JSON lines {"id", "e_qwen": [...], "e_qzhou": [...]}
//   embeddings    plain text "id v1 v2 ..." with %.17g values (exact round trip)
//   checkpoint    versioned text map, one parameter per record
//   config        flat "key = value" lines, '#' comments
//   metrics log   JSON lines, one record per optimizer step

struct CorpusRecord {
    std::string id;
    std::string text;
    std::optional<std::string> positive;
    std::vector<std::string> negatives;
};

inline std::vector<CorpusRecord> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_corpus: cannot open " + path);
    std::vector<CorpusRecord> records;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("load_corpus: malformed record at line " +
                                     std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("id") || !j.contains("text"))
            throw std::runtime_error("load_corpus: missing id/text at line " +
                                     std::to_string(line_no));
        CorpusRecord r;
        r.id = j["id"].get<std::string>();
        r.text = j["text"].get<std::string>();
        if (j.contains("positive")) r.positive = j["positive"].get<std::string>();
        if (j.contains("negatives"))
            r.negatives = j["negatives"].get<std::vector<std::string>>();
        if (!seen.insert(r.id).second)
            throw std::runtime_error("load_corpus: duplicate id '" + r.id + "' at line " +
                                     std::to_string(line_no));
        records.push_back(std::move(r));
    }
    return records;
}

struct TeacherRecord {
    std::string id;
    std::vector<double> e_qwen;
    std::vector<double> e_qzhou;
};

inline std::vector<TeacherRecord> load_teacher_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_teacher_file: cannot open " + path);
    std::vector<TeacherRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("load_teacher_file: malformed record at line " +
                                     std::to_string(line_no) + ": " + e.what());
        }
        records.push_back(TeacherRecord{j.at("id").get<std::string>(),
                                        j.at("e_qwen").get<std::vector<double>>(),
                                        j.at("e_qzhou").get<std::vector<double>>()});
    }
    return records;
}

inline void save_teacher_file(const std::string& path,
                              const std::vector<TeacherRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_teacher_file: cannot open " + path);
    for (const auto& r : records) {
        nlohmann::json j{{"id", r.id}, {"e_qwen", r.e_qwen}, {"e_qzhou", r.e_qzhou}};
        out << j.dump() << "\n";
    }
}

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// ---- embeddings ----

inline void write_embeddings(std::ostream& out,
                             const std::vector<std::string>& ids, const Tensor& rows) {
    if (ids.size() != rows.rows())
        throw std::invalid_argument("write_embeddings: id/row count mismatch");
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out << ids[i];
        for (std::size_t j = 0; j < rows.cols(); ++j)
            out << ' ' << detail::format_double(rows.at(i, j));
        out << '\n';
    }
}

inline std::vector<std::pair<std::string, std::vector<double>>> read_embeddings(
    std::istream& in) {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id;
        ls >> id;
        std::vector<double> vals;
        double v;
        while (ls >> v) vals.push_back(v);
        out.emplace_back(std::move(id), std::move(vals));
    }
    return out;
}

// ---- checkpoints ----

inline constexpr const char* kCheckpointMagic = "jtc-checkpoint v1";

inline void save_checkpoint(const std::string& path, const EncoderModel& model,
                            int completed_stage) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << kCheckpointMagic << "\n";
    out << "stage " << completed_stage << "\n";
    const auto& c = model.config;
    out << "config " << c.vocab_size << ' ' << c.d_model << ' ' << c.n_layers << ' '
        << c.n_heads << ' ' << c.mlp_hidden << ' ' << c.output_dim << ' ' << c.max_seq_len
        << ' ' << c.compression_hidden() << "\n";
    for (const auto& [name, t] : model.parameters()) {
        out << "param " << name << ' ' << t.rank();
        for (auto d : t.shape()) out << ' ' << d;
        out << "\n";
        const auto& data = t.data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (i) out << ' ';
            out << detail::format_double(data[i]);
        }
        out << "\n";
    }
}

struct Checkpoint {
    EncoderModel model;
    int completed_stage = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kCheckpointMagic)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    Checkpoint ck;
    std::string word;
    in >> word;
    if (word != "stage") throw std::runtime_error("load_checkpoint: missing stage");
    in >> ck.completed_stage;
    in >> word;
    if (word != "config") throw std::runtime_error("load_checkpoint: missing config");
    EncoderConfig cfg;
    in >> cfg.vocab_size >> cfg.d_model >> cfg.n_layers >> cfg.n_heads >> cfg.mlp_hidden >>
        cfg.output_dim >> cfg.max_seq_len >> cfg.compress_hidden;
    Rng init_rng(0);
    ck.model = EncoderModel::init(cfg, init_rng);
    auto params = ck.model.parameters();
    while (in >> word) {
        if (word != "param") throw std::runtime_error("load_checkpoint: expected param");
        std::string name;
        std::size_t rank;
        in >> name >> rank;
        std::vector<std::size_t> shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            in >> d;
            n *= d;
        }
        auto it = params.find(name);
        if (it == params.end())
            throw std::runtime_error("load_checkpoint: unknown parameter " + name);
        if (it->second.shape() != shape)
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        auto& data = it->second.mutable_data();
        for (std::size_t i = 0; i < n; ++i) in >> data[i];
    }
    return ck;
}

// ---- config ----

class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("Config: cannot open " + path);
        Config c;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                if (line.find_first_not_of(" \t\r") != std::string::npos)
                    throw std::runtime_error("Config: malformed line " +
                                             std::to_string(line_no) + " in " + path);
                continue;
            }
            c.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
        return c;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stod(it->second);
    }

    long get_int(const std::string& key, long fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stol(it->second);
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

// ---- metrics ----

struct MetricsRecord {
    std::size_t step = 0;
    int stage = 0;
    double lr = 0.0;
    std::optional<double> ratio;
    std::map<std::string, double> losses;
};

inline void append_metrics(std::ostream& out, const MetricsRecord& m) {
    nlohmann::json j{{"step", m.step}, {"stage", m.stage}, {"lr", m.lr}};
    if (m.ratio) j["ratio"] = *m.ratio;
    j["losses"] = m.losses;
    out << j.dump() << "\n";
}

}  // namespace jtc
