//! Prompt templates for the chat agents.

use crate::evaluation::MetricReport;
use crate::program::range_list_text;
use crate::raster::ImageStats;

pub const CRITIC_SYSTEM: &str = "Task:
You are an advanced image analysis assistant. Multiple images will be provided along with their color statistics. The first image is the source image, and the rest of the images are the target images. The content and the photometric style of the source and target images differ. The photometric styles of all the target images are the same.
Your task is to compare the source and target images in terms of the photometric style and identify how the target images differ from the source image in the specific photometric aspects: Exposure, Contrast, Highlight, Shadow, Saturation, Temperature, Texture.

Definition:
- Exposure refers to the overall brightness of the image. A higher factor results in a brighter image, while a lower factor makes the image darker.
- Contrast refers to the difference in brightness between light and dark areas of an image. A higher factor increases the difference, making the image more vivid but losing detail, while a lower factor reduces the difference, retaining more detail but making the image look softer.
- Highlight refers to the brightest areas in an image. A higher factor brightens these regions further, which can lead to loss of detail in overexposed areas, while a lower factor reduces brightness, helping to recover details lost in the highlights.
- Shadow refers to the darkest areas in an image. A higher factor brightens these regions, revealing details hidden in underexposed areas, while a lower factor darkens the shadows, enhancing contrast and creating a more dramatic effect, which can result in a loss of detail in the darkest areas.
- Saturation refers to the intensity of colors in an image. A higher factor enhances the vibrancy of colors, making them more intense, while a lower factor reduces the intensity, eventually leading to a grayscale image, where all color is removed.
- Temperature refers to the balance between warm and cool tones in an image. A higher factor adds warmth with reddish tones, while a lower factor introduces coolness with bluish tones.
- Texture refers to the level of detail and high-frequency variations in an image, influencing its perceived sharpness and surface characteristics. A higher factor enhances fine details and edges, while a lower factor softens the image by reducing these variations.

Instructions:
1. Choose whether to increase, decrease, or maintain the factor for each aspect. If adjusting, select the appropriate adjustment range from the given options, and if maintaining, write 'N/A' for that aspect.
2. If adjustments are needed for one or more aspects, write 'go' for the Overall part, while no adjustments are needed for any aspect, write 'stop'.

Output Format:
- Exposure: [description of exposure difference, e.g., the brightness of the target image is 10-20% higher than the one of the source image. or N/A.]
- Contrast: [description of contrast difference, e.g., the contrast of the target image is 10-20% higher than the one of the source image. or N/A.]
- Highlight: [description of highlight difference, e.g., the highlight of the target image is 10-20% higher than the one of the source image. or N/A.]
- Shadow: [description of shadow difference, e.g., the shadow of the target image is 10-20% higher than the one of the source image. or N/A.]
- Saturation: [description of saturation difference, e.g., the saturation of the target image is 10-20% higher than the one of the source image. or N/A.]
- Temperature: [description of temperature difference, e.g., the temperature of the target image is 10-20% higher than the one of the source image. or N/A.]
- Texture: [description of texture difference, e.g., the texture of the target image is 10-20% higher than the one of the source image. or N/A.]
- Overall: Write 'Stop' if there is an N/A for all aspects, and 'Go' if one or more aspects have differences.";

const CRITIC_USER: &str = "Task:
You should describe the similar parts between the source image and the target images and generate {n} candidate descriptions. Each candidate should include the difference of all the aspects.
Compare the source image and the target images in terms of the photometric adjustments made to the image, and describe the difference in each aspect.
You can choose the range from the following list: {range_list}%. Do not exceed the range.
You can use the color statistics and the scores between the source and target image as a guide.

Color Statistics:
- Source: {source_stats}.
- Targets (averaged): {target_stats}.

Averaged scores (PSNR, SSIM, LPIPS, Delta E):
{scores}

Output Format:
Similar parts
[Description of the similar parts]
{candidates}";

const INSTRUCTION_SYSTEM: &str = "Task:
You are an advanced image analysis assistant. One source image will be provided along with its color statistics and a retouching instruction from the user. Your task is to translate the instruction into changes of the specific photometric aspects: Exposure, Contrast, Highlight, Shadow, Saturation, Temperature, Texture. Relative words such as 'further' or 'slightly' refer to the adjustment history, listed from the oldest to the current image.

Instructions:
1. Choose whether to increase, decrease, or maintain the factor for each aspect. If adjusting, select the appropriate adjustment range from the given options, and if maintaining, write 'N/A' for that aspect.
2. If adjustments are needed for one or more aspects, write 'go' for the Overall part, while no adjustments are needed for any aspect, write 'stop'.

Output Format:
- Exposure: [e.g., the brightness of the target image is 10-20% higher than the one of the source image. or N/A.]
- Contrast: [same format or N/A.]
- Highlight: [same format or N/A.]
- Shadow: [same format or N/A.]
- Saturation: [same format or N/A.]
- Temperature: [same format or N/A.]
- Texture: [same format or N/A.]
- Overall: Write 'Stop' if there is an N/A for all aspects, and 'Go' if one or more aspects have differences.";

const INSTRUCTION_USER: &str = "Task:
Generate {n} candidate descriptions that realize the user instruction with different adjustment strengths. Each candidate should include all the aspects.
You can choose the range from the following list: {range_list}%. Do not exceed the range.

User instruction: {instruction}

Color Statistics:
- Source: {source_stats}.

Adjustment history (image statistics, oldest first):
{history}

Output Format:
{candidates}";

pub const CODEGEN_SYSTEM: &str = "Task:
You are an expert Python programmer.
Your task is to generate Python code that sets the appropriate filters and parameter values based on the given photometric aspect-wise description of the color tone difference between the source image and the target image, and arranges the sequence of those steps to make the source image resemble the target image.

Based on the given description, choose one of the following three options and proceed with the corresponding photometric adjustments:
- Global Brightness Adjustment (exposure, contrast): If global brightness adjustments are needed more than 1%, focus on modifying elements that affect overall brightness. Do not adjust local brightness, color tone, and texture elements at this stage, only global brightness-related factors.
- Local Brightness Adjustment (highlight, shadow): If the global brightness adjustments are completed with less than 1% differences, focus on modifying elements that affect local brightness. Do not adjust global brightness, color tone, and texture elements at this stage, only local brightness-related factors.
- Color Tone and Texture Adjustment (saturation, temperature, texture): If both the global and local brightness adjustments are completed with less than 1% differences, focus on modifying elements that affect color tone and texture. Do not adjust global brightness and local brightness elements at this stage, only color tone and texture-related factors.";

const CODEGEN_USER: &str = "Instructions:
1. Examine the given photometric difference description to determine which option to choose, and select only one option from the three options. Ensure that no other options are executed in the code.
2. Select the appropriate filters for the selected adjustment option, and arrange filters in the correct order.
3. The filter parameters can be chosen randomly within the range specified in the description.
4. The variable name of the adjusted image is \"{save_name}\".

Difference Description:
{description}.

Available Functions:
- \"filter.exposure(f_exp: float) -> np.ndarray\": Adjusts the exposure (overall brightness) of an image. The f_exp parameter is an exposure adjustment factor, ranging from -1 to 1. The positive f_exp values brighten the overall image, while negative values darken it.
- \"filter.contrast(f_cont: float) -> np.ndarray\": Adjusts the contrast of an image by scaling its pixel values relative to the mean brightness of the image. The f_cont parameter is a contrast adjustment factor, ranging from -1 to 1. Positive f_cont values increase the contrast, making the image more vivid but potentially losing detail in bright and dark areas, while negative values reduce the contrast, retaining more detail but making the image look softer.
- \"filter.highlight(f_high: float) -> np.ndarray\": Adjusts the brightness of the bright areas of an image. The f_high parameter is a highlight adjustment factor, ranging from -1 to 1. The positive f_high values intensify the highlights, and negative values reduce them to recover details.
- \"filter.shadow(f_shad: float) -> np.ndarray\": Adjusts the brightness of the dark areas of an image. The f_shad parameter is a shadow adjustment factor, ranging from -1 to 1. The positive f_shad values brighten the shadows and negative values deepen them.
- \"filter.saturation(f_sat: float) -> np.ndarray\": Adjusts the saturation of an image. The f_sat parameter is a saturation adjustment factor, ranging from -1 to 1. The positive f_sat values increase color vibrancy, while negative values desaturate the image towards grayscale.
- \"filter.temperature(f_temp: float) -> np.ndarray\": Adjusts the color temperature of an image by modifying the balance between warm and cool tones in the RGB color space. The f_temp parameter is a temperature adjustment factor, ranging from -1 to 1. The positive f_temp values shift colors toward warmer tones by increasing red, while negative values shift colors toward cooler tones by enhancing blue.
- \"filter.texture(f_text: float) -> np.ndarray\": Adjusts the texture of an image by modifying its high-frequency details using Gaussian blur. The f_text parameter is a texture adjustment parameter, ranging from -1 to 1. The positive f_text values enhance texture by amplifying high-frequency details, while negative values soften texture.

Please return the code directly without any imports or additional explanations.
Ensure the code is clear, correct, and follows the steps logically.";

fn candidate_headings(n: usize) -> String {
    (1..=n)
        .map(|i| {
            let which = match i {
                1 => "first".to_string(),
                2 => "second".to_string(),
                3 => "third".to_string(),
                _ => format!("{i}th"),
            };
            format!("\nCandidate {i}\n[Description of the {which} candidate]")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn score_line(scores: Option<&MetricReport>) -> String {
    match scores {
        Some(s) => format!("{:.4}, {:.4}, n/a, {:.4}", s.psnr, s.ssim, s.delta_e),
        None => "n/a, n/a, n/a, n/a".to_string(),
    }
}

pub fn critic_user(n: usize, source: &ImageStats, targets: &ImageStats, scores: Option<&MetricReport>) -> String {
    CRITIC_USER
        .replace("{n}", &n.to_string())
        .replace("{range_list}", &range_list_text())
        .replace("{source_stats}", &source.to_prompt_text())
        .replace("{target_stats}", &targets.to_prompt_text())
        .replace("{scores}", &score_line(scores))
        .replace("{candidates}", &candidate_headings(n))
}

pub fn instruction_system() -> &'static str {
    INSTRUCTION_SYSTEM
}

pub fn instruction_user(n: usize, instruction: &str, source: &ImageStats, history: &[ImageStats]) -> String {
    let history = if history.is_empty() {
        "none".to_string()
    } else {
        history
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {}", i + 1, s.to_prompt_text()))
            .collect::<Vec<_>>()
            .join("\n")
    };
    INSTRUCTION_USER
        .replace("{n}", &n.to_string())
        .replace("{range_list}", &range_list_text())
        .replace("{instruction}", instruction)
        .replace("{source_stats}", &source.to_prompt_text())
        .replace("{history}", &history)
        .replace("{candidates}", &candidate_headings(n))
}

pub fn codegen_user(save_name: &str, description: &str) -> String {
    CODEGEN_USER
        .replace("{save_name}", save_name)
        .replace("{description}", description.trim_end())
}
