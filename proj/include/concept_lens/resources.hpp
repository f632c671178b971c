#pragma once

// Bundled default inputs. Copies of these texts live under resources/ in the
// repository so they can be edited and passed back in via CLI flags; a test
// keeps both in sync.

#include <string_view>

namespace clens::resources {

// 100 entries in their published order. "marble" and "butterfly" appear
// twice and therefore carry double weight in the baseline mean.
inline constexpr std::string_view kBaselineWords =
    "desk\njacket\ngondola\nlaughter\nintelligence\nbicycle\nchair\norchestra\nsand\npottery\n"
    "arrowhead\njewelry\ndaffodil\nplateau\nestuary\nquilt\nmoment\nbamboo\nravine\narchive\n"
    "hieroglyph\nstar\nclay\nfossil\nwildlife\nflour\ntraffic\nbubble\nhoney\ngeode\n"
    "magnet\nribbon\nzigzag\npuzzle\ntornado\nanthill\ngalaxy\npoverty\ndiamond\nuniverse\n"
    "vinegar\nnebula\nknowledge\nmarble\nfog\nriver\nscroll\nsilhouette\nmarble\ncake\n"
    "valley\nwhisper\npendulum\ntower\ntable\nglacier\nwhirlpool\njungle\nwool\nanger\n"
    "rampart\nflower\nresearch\nhammer\ncloud\njustice\ndog\nbutterfly\nneedle\nfortress\n"
    "bonfire\nskyscraper\ncaravan\npatience\nbacon\nvelocity\nsmoke\nelectricity\nsunset\nanchor\n"
    "parchment\ncourage\nstatue\noxygen\ntime\nbutterfly\nfabric\npasta\nsnowflake\nmountain\n"
    "echo\npiano\nsanctuary\nabyss\nair\ndewdrop\ngarden\nliterature\nrice\nenigma\n";

inline constexpr std::string_view kCatalogue = R"CAT(# Concept catalogue: one category per key, concepts used verbatim as prompts.
animals = ["octopus", "frog", "squirrel", "giraffe", "bee", "dog", "lion", "elephant", "parrot", "T-rex"]
seasons = ["spring (season)", "summer", "autumn", "winter"]
celebrations = ["Christmas", "Halloween", "Easter", "birthday", "wedding", "funeral"]
subjects = ["mathematics", "philosophy", "geometry", "history", "physics", "chemistry", "biology", "computer science", "geography", "music (subject)"]
sensory = ["loud", "silent", "smooth", "rough", "sweet"]
people = ["Cleopatra", "Caesar", "Napoleon", "Marilyn Monroe", "Frida Kahlo", "Elvis Presley", "Einstein", "William Shakespeare", "Wolfgang Amadeus Mozart", "Winston Churchill"]
cities = ["new york", "san francisco", "paris", "rome", "london"]
sports = ["soccer", "poker", "basketball", "chess", "hockey", "rugby", "tennis", "golf", "judo", "boxing"]
nationalities = ["french", "italian", "egyptian", "czech", "chinese", "greek", "american", "indian", "german", "japanese"]
activities = ["swimming", "running", "reading", "eating", "sleeping", "crying", "smiling", "flying", "screaming", "dancing"]
emotions = ["love", "fear", "anger", "sadness", "happiness"]
emotion_adjectives = ["loving person", "fearful person", "angry person", "sad person", "happy person"]
llm_tasks = ["programming", "translating", "refusing", "summarizing", "formatting"]
physical_objects = ["kettle", "toaster", "jupiter", "armchair", "bicycle", "tree", "camera", "key", "radio", "phone"]

# Word substituted into the hinted question "What [hint] is in the image ...".
[hints]
animals = "animal"
seasons = "season"
celebrations = "celebration"
subjects = "school subject"
sensory = "sensation"
people = "famous person"
cities = "city"
sports = "sport"
nationalities = "nationality"
activities = "activity"
emotions = "emotion"
emotion_adjectives = "emotion"
llm_tasks = "task"
physical_objects = "object"
)CAT";

// Grading rubric with {request}, {response} and {concept} placeholders.
inline constexpr std::string_view kRubricTemplate =
    R"RUBRIC(Please carefully read the following user request (denoted as 'REQUEST') and response (denoted as 'RESPONSE').

<BEGIN REQUEST>
{request}
<END REQUEST>

<BEGIN RESPONSE>
{response}
<END RESPONSE>

You are evaluating a model that answered a question (REQUEST) about an image.

Analyze the RESPONSE, then score it according to the following rubric:

0: In the span of the answer, the model doesn't mention it sees '{concept}' in the image. E.g. it mentions other concepts, but not '{concept}'.

1: In the span of the answer, the model does mention it sees '{concept}' in the image. Either it does so explicitly, or it is clear from the context of the REQUEST and the content of the RESPONSE. It is okay if it mentions other things in addition to '{concept}'.

End your answer with "Result: 0" or "Result: 1", depending on the score.)RUBRIC";

}  // namespace clens::resources
