#include "terracover/audit.hpp"

#include <algorithm>
#include <cmath>

#include "terracover/losses.hpp"

namespace terra {

std::vector<SuspectRecord> rank_by_loss(Network<float>& net, const Manifest& manifest,
                                        const Taxonomy& taxonomy, Split split,
                                        int level, double threshold) {
  const LabelSpace space = make_label_space(manifest.legend, taxonomy, level);
  const auto indices = manifest.split_indices(split);
  if (indices.empty()) throw DataError("requested split is empty");
  const int k = space.size();

  std::vector<SuspectRecord> records;
  records.reserve(indices.size());

  for (std::size_t i : indices) {
    const Sample& sample = manifest.samples[i];
    ImageGrid image = load_image(sample.image_path);

    Tensor<float> input({1, 3, image.height, image.width});
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
          // Same centering as the trainer's batch assembly.
          input(0, c, y, x) = static_cast<float>(image.at(y, x, c)) / 127.5f - 1.0f;
        }
      }
    }

    Tensor<float> targets({1, k});
    SuspectRecord record;
    record.patch_id = sample.patch_id;
    for (int global : manifest.labels_at(i, level).indices) {
      const int local = space.local_of_global(global);
      if (local < 0) {
        throw DataError("sample " + sample.patch_id +
                        " carries a class outside the legend");
      }
      targets.values()[local] = 1.0f;
      record.stored_truth.push_back(local);
    }

    const Tensor<float>& logits = net.forward(input);
    record.loss = bce_multilabel_loss(logits, targets).loss;

    for (int c = 0; c < k; ++c) {
      const double prob =
          0.5 * (1.0 + std::tanh(0.5 * static_cast<double>(logits.values()[c])));
      if (prob > record.top_probability) {
        record.top_probability = prob;
        record.top_class = c;
      }
      if (prob >= threshold) {
        record.predicted.push_back(c);
        record.probabilities.push_back(prob);
      }
    }
    records.push_back(std::move(record));
  }

  std::sort(records.begin(), records.end(),
            [](const SuspectRecord& a, const SuspectRecord& b) {
              if (a.loss != b.loss) return a.loss > b.loss;
              return a.patch_id < b.patch_id;
            });
  return records;
}

std::vector<std::string> flag_suspects(const std::vector<SuspectRecord>& ranked,
                                       double top_fraction) {
  if (top_fraction <= 0.0 || top_fraction > 1.0) {
    throw UsageError("top fraction must be in (0, 1]");
  }
  const auto count = static_cast<std::size_t>(std::min<double>(
      std::ceil(top_fraction * static_cast<double>(ranked.size()) - 1e-9),
      static_cast<double>(ranked.size())));
  std::vector<std::string> ids;
  ids.reserve(count);
  for (std::size_t i = 0; i < count; ++i) ids.push_back(ranked[i].patch_id);
  return ids;
}

}  // namespace terra
