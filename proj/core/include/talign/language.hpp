#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace talign {

// Maps text to a probability distribution over language codes.
class LanguageClassifier {
 public:
  virtual ~LanguageClassifier() = default;
  virtual std::map<std::string, double> classify(std::string_view text) const = 0;

  // Probability of `language`; 0 when the classifier does not know it.
  double probability(std::string_view text, const std::string& language) const;
};

// Character-trigram naive Bayes with add-one smoothing and a uniform prior.
// Text is lower-cased (ASCII only) and padded with spaces.
class TrigramClassifier final : public LanguageClassifier {
 public:
  // Trained on a small built-in sample of seven European languages.
  static const TrigramClassifier& bundled();

  void train(const std::string& language, std::string_view sample);
  std::map<std::string, double> classify(std::string_view text) const override;

 private:
  struct Profile {
    std::map<std::string, double, std::less<>> counts;
    double total = 0.0;
  };
  std::map<std::string, Profile> profiles_;
  std::map<std::string, int, std::less<>> vocabulary_;
};

std::vector<std::string> char_trigrams(std::string_view text);

}  // namespace talign
