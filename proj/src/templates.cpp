#include "copilot/templates.hpp"

#include <array>

namespace copilot::harness {

namespace {

using Bank = std::array<std::string_view, 20>;

constexpr std::array<Bank, 7> kStrategy{{
    // prompt_explain
    {"Can you explain how you got {n}?",
     "Walk me through your thinking on this one.",
     "How did you figure that out?",
     "Explain to me what you did first.",
     "What made you think the answer is {n}?",
     "Could you show me the steps you used?",
     "Tell me more about how you solved it.",
     "Why do you think that works?",
     "Can you describe your strategy in your own words?",
     "How do you know {n} is right?",
     "Talk me through each step you took.",
     "What was your reasoning for that step?",
     "Can you explain why you multiplied there?",
     "Explain how you got from {n} to {m}.",
     "I'd love to hear how you worked that out.",
     "Can you say more about why that makes sense?",
     "How would you explain this to a classmate?",
     "Tell me why you added those two numbers.",
     "Describe what you were thinking when you wrote {n}.",
     "Why did you pick that method?"},
    // ask_guiding_question
    {"What number can we multiply {n} by to get {m}?",
     "What do you think we should do first?",
     "What happens if we divide both sides by {n}?",
     "Which place value is the {n} in?",
     "What is {n} times {m}?",
     "How many groups of {n} are in {m}?",
     "What operation do you see in this word problem?",
     "Which number is bigger, {n} or {m}?",
     "What does the denominator tell us here?",
     "Can you find a common denominator for these fractions?",
     "What do we know about the sides of a rectangle?",
     "If you have {n} apples and get {m} more, how many do you have?",
     "What is the next step after finding the area?",
     "What would happen if we rounded {n} to the nearest ten?",
     "Where should we start with this problem?",
     "What is half of {n}?",
     "Which digit is in the tens place?",
     "How could we check if our answer makes sense?",
     "What information does the problem give us?",
     "Do we need to add or subtract to solve this?"},
    // affirm_correct_attempt
    {"Yes, {n} is correct!",
     "That's right, you got {n}.",
     "Correct! You got it.",
     "Exactly right, {n} it is.",
     "You're correct about that.",
     "Yes! That is the right answer.",
     "Perfect, you solved it correctly.",
     "Correct, {n} is exactly what I got too.",
     "Right on! Your answer is correct.",
     "Yes, you nailed it.",
     "That is correct, well done.",
     "You got it right, {n} is correct.",
     "Yes, that's exactly it.",
     "Correct answer, you checked your work.",
     "Spot on, {n} is right.",
     "Yes, your answer of {n} is correct.",
     "Yes, that is the correct answer.",
     "You are right, that works.",
     "Correct! You multiplied perfectly.",
     "Yep, that's correct."},
    // ask_retry
    {"Can you try that again?",
     "Let's give it another try.",
     "Try it one more time.",
     "Not quite, can you try again?",
     "Want to take another shot at it?",
     "Let's try that problem again together.",
     "Could you redo that step?",
     "Try solving it again from the beginning.",
     "Give it one more go.",
     "Can you check your work and try again?",
     "Let's try again, slowly this time.",
     "Try the last step again.",
     "Please try that one more time.",
     "Can you rework that problem?",
     "Let's go back and try again.",
     "Another try? You're close.",
     "Try again, and count carefully.",
     "Can you attempt it again?",
     "Let's retry that calculation.",
     "Redo the problem and see what you get."},
    // give_answer
    {"The answer is {n}.",
     "So, the greatest number will be {n}.",
     "It should be {n}.",
     "The correct answer is {n}.",
     "{n} is the answer here.",
     "So the total is {n}.",
     "That gives us {n}.",
     "The area is {n} square units.",
     "So {n} plus {m} equals {k}.",
     "The missing number is {n}.",
     "We get {n} when we simplify.",
     "The fraction simplifies to {n}/{m}.",
     "So x equals {n}.",
     "The perimeter is {n}.",
     "So the answer would be {n}.",
     "The sum is {n}.",
     "The quotient is {n}.",
     "It comes out to {n}.",
     "The product is {n}.",
     "Final answer: {n}."},
    // give_solution_strategy
    {"First, multiply the ones, then the tens.",
     "Try lining up the decimal points before you add.",
     "You can draw a model to help you see it.",
     "Start by finding a common denominator.",
     "Break {n} into tens and ones first.",
     "Use the distributive property to split it up.",
     "Try rounding to estimate before solving.",
     "Draw a number line and count by {n}s.",
     "Multiply the length by the width to find the area.",
     "Subtract the smaller number from the larger one.",
     "Divide both the numerator and denominator by the same number.",
     "Make a table to keep track of the pattern.",
     "Underline the important numbers in the word problem.",
     "Use place value blocks to regroup.",
     "Add the sides together to get the perimeter.",
     "Think of multiplication as repeated addition.",
     "Cross out what you already used.",
     "Convert the mixed number to an improper fraction first.",
     "Work backwards from the answer choices.",
     "Line up the numbers by place value."},
    // generic_encouragement
    {"That's a good try!",
     "You're doing great!",
     "Keep up the good work!",
     "Nice effort!",
     "Don't give up, you can do it!",
     "I believe in you!",
     "Great job staying focused!",
     "You're working really hard today!",
     "Awesome effort!",
     "Keep going, you're doing well!",
     "I'm proud of you!",
     "Way to stick with it!",
     "You've got this!",
     "Good job!",
     "Nice work today!",
     "You're a hard worker!",
     "Fantastic effort!",
     "Keep it up!",
     "Super job!",
     "Great work so far!"},
}};

using MomentBank = std::array<std::string_view, 5>;

// during_exit_ticket reuses the during_attempt wording on purpose: only the
// context tells them apart.
constexpr std::array<MomentBank, 8> kMoment{{
    {"Hi {student}! How are you today?", "Hello {student}, ready to start?",
     "Good morning! Let's get started.", "Hey there, welcome back!",
     "Hi! Today we're working on {topic}."},
    {"Let's look at problem {n}.", "Here is the next problem.", "Okay, on to the next question.",
     "Let's move to number {n}.", "Read the next problem out loud for me."},
    {"Take your time.", "I'll wait while you work on it.", "Let me know when you're done.",
     "No rush.", "Okay, I'm here if you need help."},
    {"Okay, let's look at what you wrote.", "Thanks for sharing your answer.", "Let me check that.",
     "Hmm, let's see.", "Okay, I see your answer."},
    {"Now it's time for the exit ticket.", "Let's start the exit ticket.",
     "Please open your exit ticket now.", "Time to try the exit ticket on your own.",
     "Go ahead and begin the exit ticket."},
    {"Take your time.", "I'll wait while you work on it.", "Let me know when you're done.",
     "No rush.", "Okay, I'm here if you need help."},
    {"You finished the exit ticket!", "Thanks for completing the exit ticket.",
     "Exit ticket submitted, let's review.", "All done with the exit ticket.",
     "Let's look at your exit ticket results."},
    {"Bye {student}, see you next time!", "That's all for today.",
     "Have a wonderful rest of your day!", "Thanks for working with me, goodbye!",
     "See you next week!"},
}};

constexpr std::array<std::string_view, 6> kGreetings{"Hi", "Hello!", "Good", "Ready",
                                                     "hi i'm good", "Hey"};
constexpr std::array<std::string_view, 8> kAttempts{"I got {n}",  "Is it {n}?",     "{n}",
                                                    "i think {n}", "my answer is {n}", "{n}?",
                                                    "I got {m}",  "maybe {n}"};
constexpr std::array<std::string_view, 8> kWorking{"Hmm",           "Let me think",
                                                   "ok",            "Wait",
                                                   "I'm working on it", "can you help",
                                                   "i don't know",  "one sec"};
constexpr std::array<std::string_view, 4> kFarewells{"Bye!", "bye", "Thank you", "See you"};

constexpr std::array<std::string_view, 12> kTopics{
    "multi-digit multiplication", "long division",       "equivalent fractions",
    "adding fractions",           "decimals",            "place value",
    "area and perimeter",         "ratios",              "one-step equations",
    "rounding",                   "order of operations", "negative numbers"};

// Chosen so that no name is also an everyday English word.
constexpr std::array<std::string_view, 40> kFirst{
    "Mateo",   "Sofia",  "Santiago", "Valentina", "Diego",  "Camila",  "Javier",   "Ximena",
    "Alejandro", "Daniela", "Emiliano", "Lucia",  "Andres", "Mariana", "Joaquin",  "Renata",
    "Leonardo", "Fernanda", "Tomas",  "Paola",   "Jayden", "Aaliyah", "Kendrick", "Imani",
    "Darnell", "Nia",    "Malik",    "Zuri",      "Brandon", "Ashley", "Tyler",    "Madison",
    "Ethan",   "Olivia", "Noah",     "Priya",     "Arjun",  "Mei",     "Kenji",    "Farah"};
constexpr std::array<std::string_view, 30> kLast{
    "Garcia",   "Rodriguez", "Martinez", "Hernandez", "Lopez",   "Gonzalez", "Perez",
    "Sanchez",  "Ramirez",   "Torres",   "Flores",    "Rivera",  "Gomez",    "Diaz",
    "Morales",  "Ortiz",     "Gutierrez", "Chavez",   "Ramos",   "Castillo", "Jimenez",
    "Vasquez",  "Mendoza",   "Washington", "Jefferson", "Okafor", "Nguyen",  "Patel",
    "Kowalski", "Tanaka"};

}  // namespace

std::span<const std::string_view> strategy_templates(StrategyLabel label) {
  return kStrategy[static_cast<std::size_t>(label)];
}
std::span<const std::string_view> moment_templates(MomentLabel label) {
  return kMoment[static_cast<std::size_t>(label)];
}
std::span<const std::string_view> student_greetings() { return kGreetings; }
std::span<const std::string_view> student_attempts() { return kAttempts; }
std::span<const std::string_view> student_working() { return kWorking; }
std::span<const std::string_view> student_farewells() { return kFarewells; }
std::span<const std::string_view> lesson_topics() { return kTopics; }
std::span<const std::string_view> first_names() { return kFirst; }
std::span<const std::string_view> last_names() { return kLast; }

std::string fill_template(std::string_view tmpl, const Fill& f) {
  std::string out;
  out.reserve(tmpl.size() + 16);
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        const auto key = tmpl.substr(i + 1, close - i - 1);
        bool known = true;
        if (key == "n") out += std::to_string(f.n);
        else if (key == "m") out += std::to_string(f.m);
        else if (key == "k") out += std::to_string(f.k);
        else if (key == "topic") out += f.topic;
        else if (key == "student") out += f.student;
        else known = false;
        if (known) {
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

}  // namespace copilot::harness
