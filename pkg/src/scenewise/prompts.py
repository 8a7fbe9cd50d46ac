"""Prompt templates used by the engine.

The scene-splitting prompt and its three correction prompts are fixed
operational text: the validator is tuned to the constraints they state
(at least 3 segments on long chunks, 15 to 60 second scenes), so edit
them together with the validator config or not at all. The extraction
template follows the common delimiter convention of graph-RAG tooling.
"""

SCENE_SPLIT_TEMPLATE = """-Goal-
The task is to segment the input text into distinct scenes based on the given criteria. The segmentation should be done purely based on the content provided, without the need for summarization or interpretation.

-Steps-

1. Scene Identification and Segmentation
- Identify distinct scenes in the text, and need to reflect on why these scenes are segmented. The segmentation should be based solely on the content and structure of the text.
- Ensure each scene contains detailed descriptions, dialogues, or events to form a coherent narrative unit, and must not consist of a single sentence.

2. Time Range and Scene Delimiters
- For each scene, record the time range (if available) at the beginning in the format [start_time -> end_time].
- Each scene should follow the previous one in a logical time sequence without gaps or overlaps.
- Add the scene content after the time range.
- The duration of each scene is between 15 and 60 seconds, except for those that you think are special.
- End each scene with {record_delimiter} (except the last scene).

3. Final Marker
- After all scenes, add {completion_delimiter} to indicate the end of the task.

4. Output Format
- Return the segmented text as a list of scenes.
- Output format Example:
Scene 1{record_delimiter}
Scene 2{record_delimiter}
Scene 3{record_delimiter}
Scene 4{completion_delimiter}

- Output only the segmented text without additional explanations.
######################
Text: {input_text}"""

REPAIR_TOO_FEW = """Output Error Correction Request:
Too few time ranges. Need at least 3 segments. The previous output has errors. Please verify and correct the following:

1. Ensure each scene has a duration between 15 and 60 seconds.

2. Verify that the scenes are divided correctly based on the content.

3. Ensure each scene starts with a time mark.

4. Ensure each scene contains detailed descriptions, dialogues, or events to form a coherent narrative unit.

Please maintain the required format in your response."""

REPAIR_TOO_SHORT = """Output Error Correction Request:
Some scenes have been split with time ranges that are too short. Merge scenes that are too short to meet the minimum duration requirement. Please verify and correct the following:

1. Ensure each scene has a duration between 15 and 60 seconds.

2. Verify that the scenes are divided correctly based on the content.

3. Ensure each scene starts with a time mark.

4. Ensure each scene contains detailed descriptions, dialogues, or events to form a coherent narrative unit.

5. Each scene should follow the previous one in a logical time sequence without gaps or overlaps.

Please maintain the required format in your response."""

REPAIR_TOO_LONG = """Output Error Correction Request:
Some scenes have been split with time ranges that are too long. Split scenes that exceed the maximum duration into smaller segments. Please verify and correct the following:

1. The duration of each scene should ideally not exceed 60 seconds.

2. Verify that the scenes are divided correctly based on the content.

3. Ensure each scene starts with a time mark.

4. Ensure each scene contains detailed descriptions, dialogues, or events to form a coherent narrative unit.

5. Each scene should follow the previous one in a logical time sequence without gaps or overlaps.

Please maintain the required format in your response."""

FORMAT_REMINDER = (
    "Reminder: output only the segmented scenes. Every scene must begin with a "
    "[start_time -> end_time] time mark, scenes are separated by the record "
    "delimiter, and the completion delimiter ends the output."
)

EXTRACTION_TEMPLATE = """-Goal-
Given a text document, identify all entities present and all relationships among the identified entities.

-Steps-
1. Identify all entities. For each identified entity, extract:
- entity_name: name of the entity, capitalized
- entity_type: a short category such as PERSON, ORGANIZATION, TECHNOLOGY, CONCEPT, OBJECT, PLACE, EVENT
- entity_description: a concise description of the entity grounded in this text
Format each entity as ("entity"{tuple_delimiter}<entity_name>{tuple_delimiter}<entity_type>{tuple_delimiter}<entity_description>)

2. From the entities identified in step 1, identify all pairs of (source_entity, target_entity) that are clearly related. For each pair, extract:
- source_entity and target_entity: names as identified in step 1
- relationship_description: why the source and target are related in this text
- relationship_keywords: a few keywords summarizing the relationship, separated by commas
Format each relationship as ("relationship"{tuple_delimiter}<source_entity>{tuple_delimiter}<target_entity>{tuple_delimiter}<relationship_description>{tuple_delimiter}<relationship_keywords>)

3. Return the output as a single list of all entity and relationship records, using {record_delimiter} as the list delimiter. When finished, output {completion_delimiter}.

######################
Text: {input_text}"""

EXTRACTION_TUPLE_DELIMITER = "<|>"
EXTRACTION_RECORD_DELIMITER = "##"
EXTRACTION_COMPLETION_DELIMITER = "<|COMPLETE|>"

ENTITY_MATCH_TEMPLATE = """Two lists of named entities were extracted from different descriptions of the same video scene. For each numbered candidate pair below, decide whether the two names refer to the same real-world entity.

{pairs}

Reply with one line per pair, in the form:
<pair number>: SAME
or
<pair number>: DIFFERENT

Output only these lines."""

CONDENSE_DESCRIPTION_TEMPLATE = """The entity "{name}" has accumulated the following description fragments from different video scenes:

{fragments}

Write one comprehensive description of the entity that preserves all distinct facts. Output only the description."""

KEYWORD_TEMPLATE = """Extract the salient keywords from the user query below. Keywords are the content-bearing words or short phrases a search engine would need. Return them as a single comma-separated list on one line, with no numbering and no extra text.

Query: {query}"""

CAPTION_FOCUS_PREFIX = "Focus on aspects related to these keywords: {keywords}."

ANSWER_TEMPLATE = """You are answering a question about long-form video content using retrieved scene evidence.

Question: {query}

Retrieved evidence:
{context}

Answer the question using only the evidence above. Mention scene time ranges when they support a claim. If the evidence does not contain the answer, say that the retrieved scenes are insufficient."""
