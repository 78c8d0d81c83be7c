#ifndef CADAPT_EMBEDDING_IO_HPP
#define CADAPT_EMBEDDING_IO_HPP

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cadapt/world.hpp"

namespace cadapt {

/// Parse failure in an embedding dump; carries the 1-based line number.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& path, std::size_t line, const std::string& what);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Contents of one embedding dump:
///   #dim=<F> labels=<visible|hidden>
///   domain,camera_id,frame_index,person_id,v1,...,vF
struct EmbeddingFile {
    int dim = 0;
    bool labels_visible = true;
    std::vector<Sample> samples;
};

EmbeddingFile read_embedding_file(const std::filesystem::path& path);

/// Writes samples (features already chosen by the caller). With labels
/// hidden every person_id is written as -1. Numbers use the shortest
/// round-trip representation, so output is byte-stable.
void write_embedding_file(const std::filesystem::path& path, const std::vector<Sample>& samples,
                          int dim, bool labels_visible);

/// Single dump as a Dataset: source rows become source_train, target rows
/// become target_train with identities moved into the hidden-label store.
Dataset load_embeddings(const std::filesystem::path& path);

/// Standard split files inside a data directory.
inline constexpr const char* kSourceTrainFile = "source_train.emb";
inline constexpr const char* kTargetTrainFile = "target_train.emb";
inline constexpr const char* kTargetQueryFile = "target_query.emb";
inline constexpr const char* kTargetGalleryFile = "target_gallery.emb";

/// Loads the four split files written by the gen-data command.
Dataset load_dataset_dir(const std::filesystem::path& dir);

/// Writes the four split files; target_train labels are written visible only
/// when reveal_target_labels is set and the labels are available.
std::vector<std::filesystem::path> save_dataset_dir(const Dataset& data,
                                                    const std::filesystem::path& dir,
                                                    bool reveal_target_labels);

}  // namespace cadapt

#endif
