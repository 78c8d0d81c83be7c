#include "cadapt/embedding_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <string_view>
#include <tuple>

namespace cadapt {

FormatError::FormatError(const std::string& path, std::size_t line, const std::string& what)
    : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
    text = trim(text);
    if (text.empty()) return false;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

void append_double(std::string& out, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, ptr);
}

}  // namespace

EmbeddingFile read_embedding_file(const std::filesystem::path& path) {
    const std::string name = path.string();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embedding file " + name);

    EmbeddingFile file;
    std::string line;
    if (!std::getline(in, line)) throw FormatError(name, 1, "missing header line");
    {
        std::string_view h = trim(line);
        const auto dim_pos = h.find("#dim=");
        const auto lab_pos = h.find(" labels=");
        if (dim_pos != 0 || lab_pos == std::string_view::npos) {
            throw FormatError(name, 1, "header must read '#dim=<F> labels=<visible|hidden>'");
        }
        if (!parse_number(h.substr(5, lab_pos - 5), file.dim) || file.dim < 1) {
            throw FormatError(name, 1, "invalid dimension in header");
        }
        const auto labels = h.substr(lab_pos + 8);
        if (labels == "visible") {
            file.labels_visible = true;
        } else if (labels == "hidden") {
            file.labels_visible = false;
        } else {
            throw FormatError(name, 1, "labels must be 'visible' or 'hidden'");
        }
    }

    std::set<std::tuple<int, int, long long>> seen;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto fields = split_commas(line);
        if (fields.size() != static_cast<std::size_t>(file.dim) + 4) {
            throw FormatError(name, lineno,
                              "expected " + std::to_string(file.dim + 4) + " fields, found " +
                                  std::to_string(fields.size()));
        }
        Sample s;
        const auto dom = trim(fields[0]);
        if (dom == "source") {
            s.domain = Domain::Source;
        } else if (dom == "target") {
            s.domain = Domain::Target;
        } else {
            throw FormatError(name, lineno, "domain must be 'source' or 'target'");
        }
        if (!parse_number(fields[1], s.camera_id) || s.camera_id < 0) {
            throw FormatError(name, lineno, "invalid camera_id");
        }
        if (!parse_number(fields[2], s.frame_index) || s.frame_index < 0) {
            throw FormatError(name, lineno, "invalid frame_index");
        }
        if (!parse_number(fields[3], s.person_id)) {
            throw FormatError(name, lineno, "invalid person_id");
        }
        if (!file.labels_visible) s.person_id = -1;
        s.feature.resize(static_cast<std::size_t>(file.dim));
        for (int k = 0; k < file.dim; ++k) {
            if (!parse_number(fields[4 + k], s.feature[k]) || !std::isfinite(s.feature[k])) {
                throw FormatError(name, lineno, "non-numeric feature value in column " + std::to_string(5 + k));
            }
        }
        if (!seen.emplace(static_cast<int>(s.domain), s.camera_id, s.frame_index).second) {
            throw FormatError(name, lineno,
                              "duplicate (camera_id, frame_index) pair (" + std::to_string(s.camera_id) +
                                  ", " + std::to_string(s.frame_index) + ")");
        }
        file.samples.push_back(std::move(s));
    }
    return file;
}

void write_embedding_file(const std::filesystem::path& path, const std::vector<Sample>& samples,
                          int dim, bool labels_visible) {
    std::string out = "#dim=" + std::to_string(dim) + " labels=" + (labels_visible ? "visible" : "hidden") + "\n";
    for (const auto& s : samples) {
        if (s.feature.size() != static_cast<std::size_t>(dim)) {
            throw std::invalid_argument("sample feature length " + std::to_string(s.feature.size()) +
                                        " does not match dim " + std::to_string(dim));
        }
        out += domain_name(s.domain);
        out += ',' + std::to_string(s.camera_id) + ',' + std::to_string(s.frame_index) + ',' +
               std::to_string(labels_visible ? s.person_id : -1);
        for (double v : s.feature) {
            out += ',';
            append_double(out, v);
        }
        out += '\n';
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write embedding file " + path.string());
    os << out;
    if (!os) throw std::runtime_error("write failed for embedding file " + path.string());
}

namespace {

int camera_count(const std::vector<Sample>& a, const std::vector<Sample>& b = {}) {
    int mx = -1;
    for (const auto& s : a) mx = std::max(mx, s.camera_id);
    for (const auto& s : b) mx = std::max(mx, s.camera_id);
    return mx + 1;
}

void hide_target_labels(Dataset& data, bool visible) {
    std::vector<int> truth;
    if (visible) {
        for (auto& s : data.target_train) truth.push_back(s.person_id);
    }
    for (auto& s : data.target_train) s.person_id = -1;
    data.target_train_labels = HiddenLabels(std::move(truth));
}

}  // namespace

Dataset load_embeddings(const std::filesystem::path& path) {
    auto file = read_embedding_file(path);
    Dataset data;
    data.feature_dim = file.dim;
    for (auto& s : file.samples) {
        (s.domain == Domain::Source ? data.source_train : data.target_train).push_back(std::move(s));
    }
    hide_target_labels(data, file.labels_visible);
    data.source_cameras = camera_count(data.source_train);
    data.target_cameras = camera_count(data.target_train);
    return data;
}

Dataset load_dataset_dir(const std::filesystem::path& dir) {
    const auto src = read_embedding_file(dir / kSourceTrainFile);
    const auto tgt = read_embedding_file(dir / kTargetTrainFile);
    const auto query = read_embedding_file(dir / kTargetQueryFile);
    const auto gallery = read_embedding_file(dir / kTargetGalleryFile);
    for (const auto* f : {&tgt, &query, &gallery}) {
        if (f->dim != src.dim) {
            throw std::runtime_error("dimension mismatch between split files in " + dir.string());
        }
    }
    if (!src.labels_visible) throw std::runtime_error("source_train must carry visible labels");
    if (!query.labels_visible || !gallery.labels_visible) {
        throw std::runtime_error("query and gallery files must carry visible labels");
    }
    Dataset data;
    data.feature_dim = src.dim;
    data.source_train = src.samples;
    data.target_train = tgt.samples;
    data.target_query = query.samples;
    data.target_gallery = gallery.samples;
    hide_target_labels(data, tgt.labels_visible);
    data.source_cameras = camera_count(data.source_train);
    data.target_cameras = camera_count(data.target_train, data.target_gallery);
    return data;
}

std::vector<std::filesystem::path> save_dataset_dir(const Dataset& data,
                                                    const std::filesystem::path& dir,
                                                    bool reveal_target_labels) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    auto put = [&](const char* name, const std::vector<Sample>& s, bool visible) {
        write_embedding_file(dir / name, s, data.feature_dim, visible);
        written.push_back(dir / name);
    };
    put(kSourceTrainFile, data.source_train, true);
    if (reveal_target_labels && data.target_train_labels.available()) {
        auto revealed = data.target_train;
        for (std::size_t i = 0; i < revealed.size(); ++i) {
            revealed[i].person_id = data.target_train_labels.read(i);
        }
        put(kTargetTrainFile, revealed, true);
    } else {
        put(kTargetTrainFile, data.target_train, false);
    }
    put(kTargetQueryFile, data.target_query, true);
    put(kTargetGalleryFile, data.target_gallery, true);
    return written;
}

}  // namespace cadapt
