#include "talign/language.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace talign {

namespace {

struct Sample {
  const char* language;
  const char* text;
};

// Short hand-written sentences about cooking and household tasks.
constexpr Sample kSamples[] = {
    {"en",
     "now we are going to take the flour and put it into the bowl. then add some water and mix "
     "it well with your hands. this is the part where you have to be patient. you can see that "
     "the dough is getting thicker. let me show you how to cut the onions. make sure the knife "
     "is sharp and keep your fingers away from the blade. what I like to do is heat the pan "
     "first and then pour in the oil. the next step is to wait until it turns golden brown. "
     "thank you for watching and don't forget to subscribe to the channel. so that is it for "
     "today, I hope you enjoyed this video and I will see you in the next one. we need to "
     "check the tire pressure before we start. it should be around thirty psi. just tighten "
     "the screws with the drill and that should hold the shelf in place."},
    {"fr",
     "maintenant nous allons prendre la farine et la mettre dans le bol. ensuite ajoutez un peu "
     "d'eau et melangez bien avec vos mains. c'est la partie ou il faut etre patient. vous "
     "pouvez voir que la pate devient plus epaisse. je vais vous montrer comment couper les "
     "oignons. assurez-vous que le couteau est bien aiguise. ce que j'aime faire c'est chauffer "
     "la poele d'abord et puis verser l'huile. l'etape suivante est d'attendre que ce soit "
     "dore. merci d'avoir regarde et n'oubliez pas de vous abonner a la chaine. c'est tout "
     "pour aujourd'hui, j'espere que cette video vous a plu."},
    {"de",
     "jetzt nehmen wir das mehl und geben es in die schussel. dann etwas wasser dazugeben und "
     "mit den handen gut vermischen. das ist der teil, bei dem man geduldig sein muss. man "
     "sieht, dass der teig dicker wird. ich zeige euch, wie man die zwiebeln schneidet. achtet "
     "darauf, dass das messer scharf ist. ich erhitze zuerst die pfanne und gieße dann das ol "
     "hinein. der nachste schritt ist zu warten, bis es goldbraun ist. danke furs zuschauen "
     "und vergesst nicht, den kanal zu abonnieren. das war es fur heute, ich hoffe, euch hat "
     "das video gefallen."},
    {"es",
     "ahora vamos a tomar la harina y ponerla en el tazon. despues agrega un poco de agua y "
     "mezcla bien con las manos. esta es la parte donde hay que tener paciencia. puedes ver "
     "que la masa se esta poniendo mas espesa. les voy a mostrar como cortar las cebollas. "
     "asegurate de que el cuchillo este bien afilado. lo que me gusta hacer es calentar la "
     "sarten primero y luego echar el aceite. el siguiente paso es esperar hasta que este "
     "dorado. gracias por ver y no olviden suscribirse al canal. eso es todo por hoy, espero "
     "que les haya gustado este video."},
    {"it",
     "adesso prendiamo la farina e la mettiamo nella ciotola. poi aggiungete un po' d'acqua e "
     "mescolate bene con le mani. questa e la parte in cui bisogna avere pazienza. potete "
     "vedere che l'impasto diventa piu denso. vi faccio vedere come tagliare le cipolle. "
     "assicuratevi che il coltello sia ben affilato. quello che mi piace fare e scaldare "
     "prima la padella e poi versare l'olio. il passo successivo e aspettare finche diventa "
     "dorato. grazie per aver guardato e non dimenticate di iscrivervi al canale. per oggi e "
     "tutto, spero che il video vi sia piaciuto."},
    {"pt",
     "agora vamos pegar a farinha e colocar na tigela. depois adicione um pouco de agua e "
     "misture bem com as maos. esta e a parte em que voce precisa ter paciencia. voce pode ver "
     "que a massa esta ficando mais grossa. vou mostrar como cortar as cebolas. certifique-se "
     "de que a faca esta bem afiada. o que eu gosto de fazer e aquecer a frigideira primeiro e "
     "depois colocar o oleo. o proximo passo e esperar ate ficar dourado. obrigado por assistir "
     "e nao se esquecam de se inscrever no canal. por hoje e so, espero que tenham gostado "
     "deste video."},
    {"nl",
     "nu gaan we de bloem pakken en in de kom doen. voeg dan een beetje water toe en meng het "
     "goed met je handen. dit is het deel waar je geduld moet hebben. je kunt zien dat het "
     "deeg dikker wordt. ik laat je zien hoe je de uien snijdt. zorg ervoor dat het mes scherp "
     "is. wat ik graag doe is eerst de pan verwarmen en dan de olie erin gieten. de volgende "
     "stap is wachten tot het goudbruin is. bedankt voor het kijken en vergeet je niet te "
     "abonneren op het kanaal. dat was het voor vandaag, ik hoop dat je deze video leuk vond."},
};

}  // namespace

double LanguageClassifier::probability(std::string_view text, const std::string& language) const {
  const auto dist = classify(text);
  const auto it = dist.find(language);
  return it == dist.end() ? 0.0 : it->second;
}

std::vector<std::string> char_trigrams(std::string_view text) {
  std::string norm = " ";
  bool last_space = true;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || (c < 0x80 && std::ispunct(c) && c != '\'')) {
      if (!last_space) norm.push_back(' ');
      last_space = true;
    } else {
      norm.push_back(static_cast<char>(std::tolower(c)));
      last_space = false;
    }
  }
  if (!last_space) norm.push_back(' ');
  std::vector<std::string> grams;
  for (std::size_t i = 0; i + 3 <= norm.size(); ++i) grams.push_back(norm.substr(i, 3));
  return grams;
}

const TrigramClassifier& TrigramClassifier::bundled() {
  static const TrigramClassifier instance = [] {
    TrigramClassifier c;
    for (const Sample& s : kSamples) c.train(s.language, s.text);
    return c;
  }();
  return instance;
}

void TrigramClassifier::train(const std::string& language, std::string_view sample) {
  Profile& p = profiles_[language];
  for (const std::string& g : char_trigrams(sample)) {
    p.counts[g] += 1.0;
    p.total += 1.0;
    vocabulary_.emplace(g, 0);
  }
}

std::map<std::string, double> TrigramClassifier::classify(std::string_view text) const {
  std::map<std::string, double> out;
  if (profiles_.empty()) return out;
  const auto grams = char_trigrams(text);
  const double v = static_cast<double>(vocabulary_.size()) + 1.0;
  std::map<std::string, double> log_post;
  double best = -INFINITY;
  for (const auto& [lang, prof] : profiles_) {
    double lp = 0.0;
    for (const std::string& g : grams) {
      const auto it = prof.counts.find(g);
      const double c = it == prof.counts.end() ? 0.0 : it->second;
      lp += std::log((c + 1.0) / (prof.total + v));
    }
    log_post[lang] = lp;
    best = std::max(best, lp);
  }
  double z = 0.0;
  for (auto& [lang, lp] : log_post) z += std::exp(lp - best);
  for (auto& [lang, lp] : log_post) out[lang] = std::exp(lp - best) / z;
  return out;
}

}  // namespace talign
